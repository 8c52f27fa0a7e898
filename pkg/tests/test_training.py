import csv
import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from tricyclegan.config import apply_overrides, profile
from tricyclegan.data import make_toy_sample
from tricyclegan.edges import sobel_mask_to_edges_t
from tricyclegan.errors import ConfigurationError, ResampleRequired
from tricyclegan.models import parameter_checksum, set_frozen
from tricyclegan.training import (
    LOG_COLUMNS,
    EarlyStopping,
    FrozenStateError,
    ScheduleState,
    Trainer,
    cycle_forward,
    cycle_terms,
    edges_for_batch,
    fine_tune,
    fit,
    is_synthetic_slot,
    labels_for_fraction,
    new_bundle,
    predict_mask,
    pretrain_patch_filler,
    sobel_probability,
    to_tensor,
    train_step_real,
    train_step_synthetic,
    train_supervised_baseline,
)


def toy_images(n, seed=0, labelled=False):
    rng = np.random.default_rng(seed)
    samples = [make_toy_sample(rng, 64) for _ in range(n)]
    if labelled:
        return [(img, mask) for img, mask, _ in samples]
    return [img for img, _, _ in samples]


def frozen_bundle(cfg):
    bundle = new_bundle(cfg)
    set_frozen(bundle.g_pf, True)
    return bundle


# -- schedule --------------------------------------------------------------------------


@pytest.mark.parametrize("epoch,p", [(0, 1.0), (250, 1.0), (375, 0.5), (500, 0.0), (900, 0.0), (300, 0.8)])
def test_sobel_probability_fixture(epoch, p):
    cfg = profile("full")
    assert sobel_probability(epoch, cfg) == pytest.approx(p, abs=1e-12)


@given(st.integers(0, 1000), st.integers(0, 1000))
def test_sobel_probability_monotone_and_bounded(a, b):
    cfg = profile("full")
    lo, hi = sorted((a, b))
    assert 0 <= sobel_probability(hi, cfg) <= sobel_probability(lo, cfg) <= 1


def test_cadence_counts():
    assert sum(is_synthetic_slot(i, 20) for i in range(1, 101)) == 5
    assert sum(is_synthetic_slot(i, 20) for i in range(1, 20_001)) == 1000
    assert [i for i in range(1, 61) if is_synthetic_slot(i, 20)] == [20, 40, 60]


def test_early_stopping_boundary():
    stop = EarlyStopping(patience=3)
    assert stop.update(0, 1.0)
    for epoch in (1, 2):
        stop.update(epoch, 1.0)
        assert not stop.should_stop
    stop.update(3, 1.0 - 5e-6)  # below min_delta: not an improvement
    assert stop.should_stop and stop.best_epoch == 0


def test_trainer_stops_exactly_at_patience(tiny_cfg, monkeypatch):
    cfg = replace(tiny_cfg, max_epochs=50, early_stop_patience=4)
    trainer = Trainer(cfg, frozen_bundle(cfg))
    losses = iter([5.0, 4.0, 3.0] + [3.0] * 100)
    monkeypatch.setattr(trainer, "run_epoch", lambda images: next(losses))
    trainer.fit(toy_images(2))
    assert trainer.stopped_epoch == 2 + 4
    assert len(trainer.epoch_losses) == 7
    # the best state (after epoch 2) is restored, epoch counter included
    assert trainer.bundle.epoch == 3


def test_epoch_without_synthetic_step_is_not_counted(tiny_cfg, monkeypatch):
    cfg = replace(tiny_cfg, max_epochs=6, early_stop_patience=1)
    trainer = Trainer(cfg, frozen_bundle(cfg))
    losses = iter([1.0, None, None, None, None, None])
    monkeypatch.setattr(trainer, "run_epoch", lambda images: next(losses))
    trainer.fit(toy_images(2))
    assert trainer.stopped_epoch is None and len(trainer.epoch_losses) == 6


# -- steps -----------------------------------------------------------------------------


@pytest.fixture
def step_setup(tiny_cfg):
    cfg = tiny_cfg
    bundle = frozen_bundle(cfg)
    images = to_tensor(toy_images(4))
    return cfg, bundle, images, edges_for_batch(images, cfg)


def test_real_step_leaves_m2s_and_pf_untouched(step_setup):
    cfg, bundle, images, edges = step_setup
    m2s, pf, e2m = (parameter_checksum(n) for n in (bundle.g_m2s, bundle.g_pf, bundle.g_e2m))
    out = train_step_real(bundle, images, edges, cfg, np.random.default_rng(0))
    assert parameter_checksum(bundle.g_m2s) == m2s and parameter_checksum(bundle.g_pf) == pf
    assert parameter_checksum(bundle.g_e2m) != e2m
    assert all(math.isfinite(v) for v in out.as_dict().values())


def test_real_step_requires_frozen_filler(tiny_cfg):
    bundle = new_bundle(tiny_cfg)
    images = to_tensor(toy_images(2))
    with pytest.raises(FrozenStateError):
        train_step_real(bundle, images, edges_for_batch(images, tiny_cfg), tiny_cfg, np.random.default_rng(0))


def test_synthetic_step_updates_m2s(step_setup):
    cfg, bundle, _, _ = step_setup
    mask = make_toy_sample(np.random.default_rng(1), 64)[1]
    before, pf = parameter_checksum(bundle.g_m2s), parameter_checksum(bundle.g_pf)
    out = train_step_synthetic(bundle, mask, ScheduleState(), cfg, np.random.default_rng(0))
    assert out.total > 0 and parameter_checksum(bundle.g_m2s) != before
    assert parameter_checksum(bundle.g_pf) == pf


def test_synthetic_step_empty_mask_requests_resample(step_setup):
    cfg, bundle, _, _ = step_setup
    with pytest.raises(ResampleRequired):
        train_step_synthetic(bundle, np.zeros((64, 64)), ScheduleState(), cfg, np.random.default_rng(0))


@pytest.mark.parametrize("p_sobel,route", [(1.0, "sobel"), (0.0, "s2e")])
def test_route_follows_sobel_probability(step_setup, p_sobel, route):
    cfg, bundle, _, _ = step_setup
    mask = make_toy_sample(np.random.default_rng(1), 64)[1]
    seen = []
    train_step_synthetic(
        bundle, mask, ScheduleState(p_sobel=p_sobel), cfg, np.random.default_rng(0), probe=lambda r, e: seen.append((r, e))
    )
    assert len(seen) == 1 and seen[0][0] == route
    if route == "sobel":
        assert torch.equal(seen[0][1], sobel_mask_to_edges_t(to_tensor([mask.astype(np.float32)])))


def test_identity_chain_has_zero_cycle_losses(tiny_cfg):
    bundle = new_bundle(tiny_cfg)
    for name in ("g_s2e", "g_pf", "g_e2m", "g_m2s"):
        setattr(bundle, name, _Identity(getattr(bundle, name).spec))
    x3 = to_tensor([make_toy_sample(np.random.default_rng(2), 64)[1].astype(np.float32)])
    terms = cycle_terms(x3, cycle_forward(bundle, x3, lambda m: m, lambda e: e))
    assert all(v.item() == 0.0 for v in terms.values())


class _Identity(torch.nn.Module):
    def __init__(self, spec):
        super().__init__()
        self.spec = spec

    def forward(self, x):
        return x


def test_pretrain_freezes_and_improves_reconstruction(tiny_cfg):
    from tricyclegan.edges import extract_edges
    from tricyclegan.training import occlude_t

    cfg = replace(tiny_cfg, pretrain_epochs=6, batch_size=4)
    edges = [extract_edges(im) for im in toy_images(16)]
    held = to_tensor([extract_edges(im) for im in toy_images(4, seed=9)])
    occluded = occlude_t(held, np.random.default_rng(3))
    bundle = new_bundle(cfg)
    bundle.g_pf.eval()
    with torch.no_grad():
        before = (bundle.g_pf(occluded) - held).abs().mean().item()
    pretrain_patch_filler(bundle, edges, cfg, np.random.default_rng(0))
    assert bundle.g_pf.frozen
    with torch.no_grad():
        after = (bundle.g_pf(occluded) - held).abs().mean().item()
    assert after < before


def test_pretrain_zero_epochs_only_freezes(tiny_cfg):
    cfg = replace(tiny_cfg, pretrain_epochs=0)
    bundle = new_bundle(cfg)
    before = parameter_checksum(bundle.g_pf)
    pretrain_patch_filler(bundle, [np.zeros((64, 64))], cfg)
    assert bundle.g_pf.frozen and parameter_checksum(bundle.g_pf) == before


# -- orchestration ---------------------------------------------------------------------


def test_epoch_has_five_synthetic_steps_per_hundred_samples(tiny_cfg, tmp_path):
    cfg = replace(tiny_cfg, batch_size=16, max_epochs=1)
    trainer = Trainer(cfg, frozen_bundle(cfg), log_path=tmp_path / "log.csv")
    trainer.fit(toy_images(100))
    rows = list(csv.DictReader(open(tmp_path / "log.csv")))
    assert list(rows[0]) == LOG_COLUMNS
    assert sum(r["path"] == "synthetic" for r in rows) == 5
    # 95 real samples in batches of up to 16, cut at each synthetic slot
    assert sum(r["path"] == "real" for r in rows) == 10


def test_fit_rejects_empty_dataset(tiny_cfg):
    with pytest.raises(ConfigurationError):
        fit([], tiny_cfg)


def test_fit_writes_checkpoints(tiny_cfg, tmp_path):
    bundle = fit(toy_images(20), tiny_cfg, checkpoint_dir=tmp_path)
    assert (tmp_path / "best.pt").is_file() and (tmp_path / "final.pt").is_file()
    assert bundle.g_pf.frozen and bundle.epoch >= 1


# -- supervised stages -----------------------------------------------------------------


@pytest.mark.parametrize("n,fraction,expected", [(438, 0.10, 44), (40, 0.10, 4), (5, 0.01, 1), (7, 1.0, 7), (25, 0.1, 3)])
def test_labels_for_fraction(n, fraction, expected):
    assert labels_for_fraction(n, fraction) == expected


def test_fine_tune_zero_epochs_is_identity(tiny_cfg):
    cfg = replace(tiny_cfg, finetune_epochs=0)
    bundle = frozen_bundle(cfg)
    before = parameter_checksum(bundle.g_m2s)
    fine_tune(bundle, toy_images(10, labelled=True), 0.1, cfg)
    assert parameter_checksum(bundle.g_m2s) == before and bundle.extras["finetune_labels"] == 1


def test_fine_tune_updates_m2s_only(tiny_cfg):
    bundle = frozen_bundle(tiny_cfg)
    sums = {k: parameter_checksum(v) for k, v in bundle.networks().items()}
    fine_tune(bundle, toy_images(10, labelled=True), 0.5, tiny_cfg)
    changed = {k for k, v in bundle.networks().items() if parameter_checksum(v) != sums[k]}
    assert changed == {"m2s"}


def test_fine_tune_full_chain_also_trains_translators(tiny_cfg):
    cfg = replace(tiny_cfg, finetune_full_chain=True)
    bundle = frozen_bundle(cfg)
    sums = {k: parameter_checksum(v) for k, v in bundle.networks().items()}
    fine_tune(bundle, toy_images(4, labelled=True), 0.5, cfg)
    changed = {k for k, v in bundle.networks().items() if parameter_checksum(v) != sums[k]}
    assert {"m2s", "s2e", "e2m"} <= changed and "pf" not in changed


def test_fine_tune_rejects_bad_fraction(tiny_cfg):
    with pytest.raises(ConfigurationError):
        fine_tune(frozen_bundle(tiny_cfg), toy_images(2, labelled=True), 0.0, tiny_cfg)


def test_baseline_loss_decreases_and_batch_size_one(tiny_cfg):
    cfg = replace(tiny_cfg, baseline_epochs=5, baseline_batch_size=1)
    pairs = toy_images(6, labelled=True)
    bundle = train_supervised_baseline(pairs, cfg)
    history = bundle.extras["loss_history"]
    assert len(history) == 5 and history[-1] < history[0]
    steps = [s["step"] for s in bundle.optimizers["m2s"].state_dict()["state"].values()]
    assert all(int(s) == 5 * len(pairs) for s in steps)


def test_predict_mask_binary_and_threshold_extremes(tiny_cfg):
    bundle = new_bundle(tiny_cfg)
    image = toy_images(1)[0]
    mask = predict_mask(bundle, image)
    assert mask.shape == (64, 64) and set(np.unique(mask)) <= {0, 1}
    assert np.array_equal(mask, predict_mask(bundle, image))
    assert not predict_mask(bundle, image, 1.0).any()
    assert predict_mask(bundle, image, 0.0).all()


def test_style_channel_profile_runs_end_to_end(tiny_cfg):
    cfg = apply_overrides(tiny_cfg, {"style_channel": True, "max_epochs": 1})
    bundle = fit(toy_images(20), cfg)
    assert bundle.g_m2s.spec.in_channels == 2
    assert predict_mask(bundle, toy_images(1)[0]).shape == (64, 64)
