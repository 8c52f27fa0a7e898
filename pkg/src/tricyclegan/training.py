"""Training: patch-filler pretraining, real and synthetic steps, fit, fine-tuning.

Every trainable network minimizes its own objective. Within a step the
gradients of all objectives are collected first and the optimizers stepped
afterwards, so no objective sees parameters another one already moved.

Real-path steps (unlabelled image with its extracted edge map):

* ``e2m`` learns edge -> image with adversarial + L1 loss against ``d_e2m``.
* ``s2e`` receives the current ``m2s`` segmentation of the image (no gradient
  into ``m2s``); its output is occluded, enhanced by the frozen ``pf`` and
  compared with the real edge map through ``d_s2e`` and an L1 term.

Synthetic-path steps (template mask ``x3``) run the chain twice::

    e1 = pf(occlude(to_edges(x3)))   img1 = e2m(e1)   seg1 = m2s(img1)
    e2 = pf(occlude(to_edges(seg1))) img2 = e2m(e2)

where ``to_edges`` is the Sobel mask converter with probability ``p_sobel``
and ``s2e`` otherwise (one draw per step, shared by both passes). Cycle terms
are ``|e2 - e1|``, ``|img2 - img1|`` and ``|seg1 - x3|``.

Training log columns: ``epoch, step, path, adversarial, l1, cycle_s2e,
cycle_e2m, cycle_m2s, bce, tversky, total, p_sobel``. On ``real`` rows
``adversarial``/``l1`` sum the s2e and e2m terms and ``total`` is the sum of
their objectives; on ``synthetic`` rows ``total`` is the m2s objective.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .config import TrainingConfig
from .data import STYLE_BANK, augment, style_channel
from .edges import (
    extract_edges,
    extract_edges_t,
    occlusion_mask,
    sample_occlusions,
    sobel_mask_to_edges_t,
)
from .errors import ConfigurationError, ResampleRequired, TricycleError
from .losses import (
    LossBreakdown,
    adversarial_loss,
    bce_loss,
    cycle_loss_e2m,
    cycle_loss_m2s,
    cycle_loss_s2e,
    l1_loss,
    total_loss_e2m,
    total_loss_m2s,
    total_loss_s2e,
    tversky_loss,
)
from .models import (
    ModelBundle,
    PatchDiscriminator,
    NetworkSpec,
    build_bundle,
    build_generator,
    save_bundle,
    set_frozen,
    translate,
)
from .shapes import sample_template

log = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "step", "path", *LossBreakdown.field_names(), "p_sobel"]


class FrozenStateError(TricycleError, RuntimeError):
    """The patch filler was not frozen when the main training loop ran."""


# -- schedule -------------------------------------------------------------------------


def sobel_probability(epoch, cfg: TrainingConfig) -> float:
    """1 up to ``ramp_start_epoch``, 0 from ``ramp_end_epoch``, linear in between."""
    start, end = cfg.ramp_start_epoch, cfg.ramp_end_epoch
    if epoch <= start:
        return 1.0
    if epoch >= end:
        return 0.0
    return (end - epoch) / (end - start)


def is_synthetic_slot(sample_index: int, cadence: int) -> bool:
    """Whether the 1-based global sample index falls on the synthetic cadence."""
    return sample_index % cadence == 0


@dataclass
class ScheduleState:
    epoch: int = 0
    best_m2s_loss: float = math.inf
    epochs_since_improvement: int = 0
    p_sobel: float = 1.0


class EarlyStopping:
    def __init__(self, patience: int, min_delta: float = 1e-5):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = None
        self.since = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record an epoch loss; returns True on improvement."""
        if loss < self.best - self.min_delta:
            self.best, self.best_epoch, self.since = loss, epoch, 0
            return True
        self.since += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.since >= self.patience


# -- tensor helpers -------------------------------------------------------------------


def to_tensor(images) -> torch.Tensor:
    """Stack ``H x W`` / ``H x W x C`` arrays into an ``N x C x H x W`` float tensor."""
    arrs = []
    for im in images:
        a = np.asarray(im, dtype=np.float32)
        arrs.append(a[None] if a.ndim == 2 else a.transpose(2, 0, 1))
    return torch.from_numpy(np.ascontiguousarray(np.stack(arrs)))


def occlude_t(edges: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    n, _, h, w = edges.shape
    keep = np.stack([~occlusion_mask(sample_occlusions(rng, h), (h, w)) for _ in range(n)])
    return edges * torch.from_numpy(keep[:, None].astype(np.float32)).to(edges.dtype)


def enhance(bundle: ModelBundle, edges: torch.Tensor, rng) -> torch.Tensor:
    return bundle.g_pf(occlude_t(edges, rng))


def style_channel_t(images: torch.Tensor, style_index: int = 0) -> torch.Tensor:
    gains, gammas = STYLE_BANK[style_index % len(STYLE_BANK)]
    chans = [
        (gains[i % 3] * images[:, i : i + 1].clamp_min(0) ** gammas[i % 3]).clamp(0, 1)
        for i in range(images.shape[1])
    ]
    return torch.cat(chans, dim=1).mean(dim=1, keepdim=True)


def m2s_input(bundle: ModelBundle, images: torch.Tensor, style_index: int = 0) -> torch.Tensor:
    """Append the style channel when ``m2s`` was built to expect one."""
    if bundle.g_m2s.spec.in_channels == images.shape[1] + 1:
        return torch.cat([images, style_channel_t(images, style_index)], dim=1)
    return images


def _scalar(t) -> float:
    return float(t.detach()) if isinstance(t, torch.Tensor) else float(t)


def _grads(loss, net):
    params = [p for p in net.parameters() if p.requires_grad]
    if not params:
        return []
    grads = torch.autograd.grad(loss, params, retain_graph=True, allow_unused=True)
    return [(p, torch.zeros_like(p) if g is None else g) for p, g in zip(params, grads)]


def _apply(opt, grads):
    if not grads:
        return
    opt.zero_grad(set_to_none=True)
    for p, g in grads:
        p.grad = g
    opt.step()


def _check_frozen(bundle):
    if not bundle.g_pf.frozen:
        raise FrozenStateError("g_pf must be pretrained and frozen before the main training loop")


def _train_mode(bundle):
    for net in bundle.networks().values():
        net.train(not net.frozen)


def new_bundle(cfg: TrainingConfig) -> ModelBundle:
    bundle = build_bundle(
        image_size=cfg.image_size,
        domain_channels=cfg.domain_channels,
        base_width=cfg.base_width,
        depth=cfg.depth,
        disc_depth=cfg.disc_depth,
        lr=cfg.learning_rate,
        betas=cfg.betas,
        conditioning_channels=cfg.conditioning_channels,
    )
    bundle.config_hash = cfg.config_hash()
    return bundle


def edges_for_batch(images: torch.Tensor, cfg: TrainingConfig) -> torch.Tensor:
    domain = images[:, : cfg.domain_channels]
    if cfg.edge_backend == "sobel":
        return extract_edges_t(domain)
    arrs = [extract_edges(im, cfg.edge_backend) for im in domain.numpy().transpose(0, 2, 3, 1)]
    return to_tensor(arrs)


# -- patch filler pretraining ---------------------------------------------------------


def pretrain_patch_filler(bundle: ModelBundle, real_edges, cfg: TrainingConfig, rng=None) -> ModelBundle:
    """Teach ``pf`` to restore occluded real edge maps, then freeze it.

    Uses a conditional patch discriminator local to this stage plus the L1
    reconstruction term weighted by ``lambda1``.
    """
    real_edges = list(real_edges)
    if not real_edges:
        raise ConfigurationError("patch-filler pretraining needs at least one edge map")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    g = bundle.g_pf
    if cfg.pretrain_epochs > 0:
        set_frozen(g, False)
        g.train()
        disc = PatchDiscriminator(
            NetworkSpec(2, 1, cfg.image_size, cfg.base_width, cfg.disc_depth), "d_s2e"
        )
        d_opt = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate, betas=cfg.betas)
        g_opt = bundle.optimizers["pf"]
        w = cfg.weights
        targets_all = to_tensor(real_edges)
        for epoch in range(cfg.pretrain_epochs):
            order = rng.permutation(len(real_edges))
            for start in range(0, len(order), cfg.batch_size):
                target = targets_all[order[start : start + cfg.batch_size]]
                occluded = occlude_t(target, rng)
                fake = g(occluded)
                d_loss = adversarial_loss(disc(occluded, target), disc(occluded, fake.detach()))
                _apply(d_opt, _grads(d_loss, disc))
                g_loss = adversarial_loss(None, disc(occluded, fake), "generator")
                g_loss = g_loss + w.lambda1 * l1_loss(fake, target)
                _apply(g_opt, _grads(g_loss, g))
            log.debug("pf pretrain epoch %d loss %.4f", epoch, g_loss.item())
    set_frozen(g, True)
    return bundle


# -- training steps -------------------------------------------------------------------


def train_step_real(
    bundle: ModelBundle,
    images: torch.Tensor,
    edges: torch.Tensor,
    cfg: TrainingConfig,
    rng: np.random.Generator,
    segmentation: torch.Tensor | None = None,
    cache: dict | None = None,
) -> LossBreakdown:
    """One update of ``e2m``/``d_e2m`` and ``s2e``/``d_s2e`` on real pairs.

    ``segmentation`` replaces the ``m2s`` prediction as the ``s2e`` input
    (used when labelled masks are available).
    """
    _check_frozen(bundle)
    w = cfg.weights
    domain = images[:, : cfg.domain_channels]

    fake_img = bundle.g_e2m(edges)
    d_e2m_loss = adversarial_loss(
        bundle.d_e2m(edges, domain), bundle.d_e2m(edges, fake_img.detach())
    )

    seg = segmentation
    if seg is None:
        seg = translate(bundle.g_m2s, m2s_input(bundle, domain))
    fake_edge = enhance(bundle, bundle.g_s2e(seg), rng)
    d_s2e_loss = adversarial_loss(
        bundle.d_s2e(seg, edges), bundle.d_s2e(seg, fake_edge.detach())
    )
    d_grads = [
        (bundle.optimizers["d_e2m"], _grads(d_e2m_loss, bundle.d_e2m)),
        (bundle.optimizers["d_s2e"], _grads(d_s2e_loss, bundle.d_s2e)),
    ]
    for opt, grads in d_grads:
        _apply(opt, grads)

    e2m_parts = {
        "adversarial": adversarial_loss(None, bundle.d_e2m(edges, fake_img), "generator"),
        "l1": l1_loss(fake_img, domain),
    }
    s2e_parts = {
        "adversarial": adversarial_loss(None, bundle.d_s2e(seg, fake_edge), "generator"),
        "l1": l1_loss(fake_edge, edges),
    }
    loss_e2m = total_loss_e2m(e2m_parts, w)
    loss_s2e = total_loss_s2e(s2e_parts, w)
    g_grads = [
        (bundle.optimizers["e2m"], _grads(loss_e2m, bundle.g_e2m)),
        (bundle.optimizers["s2e"], _grads(loss_s2e, bundle.g_s2e)),
    ]
    for opt, grads in g_grads:
        _apply(opt, grads)

    if cache is not None:
        cache["edges"], cache["images"] = edges.detach(), domain.detach()
    return LossBreakdown(
        adversarial=_scalar(e2m_parts["adversarial"] + s2e_parts["adversarial"]),
        l1=_scalar(e2m_parts["l1"] + s2e_parts["l1"]),
        total=_scalar(loss_e2m + loss_s2e),
    )


def cycle_forward(bundle: ModelBundle, x3: torch.Tensor, to_edges, occlude, style: int = 0) -> dict:
    """Both passes of the cycle chain starting from mask ``x3``."""
    e1 = bundle.g_pf(occlude(to_edges(x3)))
    img1 = bundle.g_e2m(e1)
    seg1 = bundle.g_m2s(m2s_input(bundle, img1, style))
    e2 = bundle.g_pf(occlude(to_edges(seg1)))
    img2 = bundle.g_e2m(e2)
    return {"e1": e1, "img1": img1, "seg1": seg1, "e2": e2, "img2": img2}


def cycle_terms(x3: torch.Tensor, fwd: dict) -> dict:
    return {
        "cycle_s2e": cycle_loss_s2e(fwd["e1"], fwd["e2"]),
        "cycle_e2m": cycle_loss_e2m(fwd["img1"], fwd["img2"]),
        "cycle_m2s": cycle_loss_m2s(x3, fwd["seg1"]),
    }


def train_step_synthetic(
    bundle: ModelBundle,
    mask,
    schedule: ScheduleState,
    cfg: TrainingConfig,
    rng: np.random.Generator,
    cache: dict | None = None,
    probe=None,
) -> LossBreakdown:
    """Two passes of a template mask through the full chain, then one update each.

    ``probe``, if given, is called with ``(route, first_pass_edges)`` where
    ``route`` is ``"sobel"`` or ``"s2e"``.
    """
    _check_frozen(bundle)
    x3 = mask if isinstance(mask, torch.Tensor) else to_tensor([mask])
    if not bool((x3 > 0).any()):
        raise ResampleRequired("template mask is empty")
    x3 = (x3 > 0).to(torch.float32)
    w = cfg.weights
    use_sobel = bool(rng.random() < schedule.p_sobel)
    to_edges = sobel_mask_to_edges_t if use_sobel else bundle.g_s2e
    style = int(rng.integers(0, len(STYLE_BANK))) if cfg.conditioning_channels else 0

    route = "sobel" if use_sobel else "s2e"
    passes = []

    def occlude(raw):
        if probe is not None and not passes:
            probe(route, raw.detach())
        passes.append(True)
        return occlude_t(raw, rng)

    fwd = cycle_forward(bundle, x3, to_edges, occlude, style)
    e1, img1, seg1 = fwd["e1"], fwd["img1"], fwd["seg1"]
    parts = {
        **cycle_terms(x3, fwd),
        "bce": bce_loss(x3, seg1, w.clamp_eps, w.bce_reduction),
        "tversky": tversky_loss(seg1, x3, w),
    }
    adv_e2m = adversarial_loss(None, bundle.d_e2m(e1, img1), "generator")
    adv_s2e = adversarial_loss(None, bundle.d_s2e(x3, e1), "generator")
    loss_e2m = total_loss_e2m({**parts, "adversarial": adv_e2m}, w)
    loss_m2s = total_loss_m2s(parts, w)
    updates = [
        (bundle.optimizers["e2m"], _grads(loss_e2m, bundle.g_e2m)),
        (bundle.optimizers["m2s"], _grads(loss_m2s, bundle.g_m2s)),
    ]
    adversarial = adv_e2m
    if not use_sobel:
        loss_s2e = total_loss_s2e({**parts, "adversarial": adv_s2e}, w)
        updates.append((bundle.optimizers["s2e"], _grads(loss_s2e, bundle.g_s2e)))
        adversarial = adversarial + adv_s2e
    if cfg.train_d_on_synthetic and cache and "images" in cache:
        real_e, real_x = cache["edges"], cache["images"]
        d_loss = adversarial_loss(
            bundle.d_e2m(real_e, real_x), bundle.d_e2m(e1.detach(), img1.detach())
        )
        updates.append((bundle.optimizers["d_e2m"], _grads(d_loss, bundle.d_e2m)))
    for opt, grads in updates:
        _apply(opt, grads)

    return LossBreakdown(
        adversarial=_scalar(adversarial),
        cycle_s2e=_scalar(parts["cycle_s2e"]),
        cycle_e2m=_scalar(parts["cycle_e2m"]),
        cycle_m2s=_scalar(parts["cycle_m2s"]),
        bce=_scalar(parts["bce"]),
        tversky=_scalar(parts["tversky"]),
        total=_scalar(loss_m2s),
    )


# -- orchestration --------------------------------------------------------------------


class Trainer:
    """Owns the bundle, random sources, schedule and log for one training run."""

    def __init__(self, cfg: TrainingConfig, bundle: ModelBundle | None = None, log_path=None, checkpoint_dir=None):
        self.cfg = cfg
        if cfg.deterministic:
            torch.use_deterministic_algorithms(True, warn_only=True)
        torch.manual_seed(cfg.seed)
        self.rng = np.random.default_rng(cfg.seed)
        self.bundle = bundle if bundle is not None else new_bundle(cfg)
        self.samples_seen = 0
        self.cache: dict = {}
        self.rows: list[dict] = []
        self.log_path = Path(log_path) if log_path else None
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.stopper = EarlyStopping(cfg.early_stop_patience, cfg.min_improvement)
        self.schedule = ScheduleState(epoch=self.bundle.epoch)
        self.epoch_losses: list[float | None] = []
        self.stopped_epoch = None
        self.best_state = None
        self._log_fh = None
        self._writer = None

    # logging
    def _open_log(self):
        if self.log_path and self._writer is None:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            self._log_fh = self.log_path.open("w", newline="")
            self._writer = csv.DictWriter(self._log_fh, fieldnames=LOG_COLUMNS)
            self._writer.writeheader()

    def _record(self, path, breakdown: LossBreakdown, step):
        row = {
            "epoch": self.schedule.epoch,
            "step": step,
            "path": path,
            **breakdown.as_dict(),
            "p_sobel": self.schedule.p_sobel,
        }
        self.rows.append(row)
        if self._writer:
            self._writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})

    def close(self):
        if self._log_fh:
            self._log_fh.close()
            self._log_fh = self._writer = None

    # data
    def _real_batch(self, images, indices):
        augmented = [augment(images[i], None, self.cfg.augment, self.rng)[0] for i in indices]
        batch = to_tensor(augmented)
        return batch, edges_for_batch(batch, self.cfg)

    def _synthetic_step(self, step):
        for _ in range(100):
            template = sample_template(self.rng, self.cfg.image_size, cone=self.cfg.cone)
            try:
                return train_step_synthetic(
                    self.bundle, template.mask, self.schedule, self.cfg, self.rng, self.cache
                )
            except ResampleRequired:
                continue
        raise ResampleRequired("could not draw a usable template")

    def pretrain(self, images):
        edges = [extract_edges(im[..., : self.cfg.domain_channels] if im.ndim == 3 else im, self.cfg.edge_backend) for im in images]
        pretrain_patch_filler(self.bundle, edges, self.cfg, self.rng)

    def run_epoch(self, images) -> float | None:
        """Train one epoch; returns the mean m2s objective over its synthetic steps."""
        cfg = self.cfg
        self.schedule.p_sobel = sobel_probability(self.schedule.epoch, cfg)
        _train_mode(self.bundle)
        order = iter(self.rng.permutation(len(images)))
        pending, m2s_losses, step = [], [], 0

        def flush():
            nonlocal step
            if pending:
                batch, edges = self._real_batch(images, pending)
                self._record("real", train_step_real(self.bundle, batch, edges, cfg, self.rng, cache=self.cache), step)
                step += 1
                pending.clear()

        for _ in range(len(images)):
            self.samples_seen += 1
            if is_synthetic_slot(self.samples_seen, cfg.synthetic_cadence):
                flush()
                breakdown = self._synthetic_step(step)
                self._record("synthetic", breakdown, step)
                m2s_losses.append(breakdown.total)
                step += 1
            else:
                pending.append(next(order))
                if len(pending) == cfg.batch_size:
                    flush()
        flush()
        return float(np.mean(m2s_losses)) if m2s_losses else None

    def _checkpoint(self, name):
        if self.checkpoint_dir:
            self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
            save_bundle(self.bundle, self.checkpoint_dir / name)

    def fit(self, images) -> ModelBundle:
        images = list(images)
        if not images:
            raise ConfigurationError("training needs at least one real image")
        cfg = self.cfg
        if not self.bundle.g_pf.frozen:
            self.pretrain(images)
        self._open_log()
        try:
            start = self.bundle.epoch
            for epoch in range(start, start + cfg.max_epochs):
                self.schedule.epoch = epoch
                loss = self.run_epoch(images)
                self.epoch_losses.append(loss)
                self.bundle.epoch = epoch + 1
                if self._log_fh:
                    self._log_fh.flush()
                if loss is None:
                    continue
                if self.stopper.update(epoch, loss):
                    self.schedule.best_m2s_loss = loss
                    self.best_state = self.bundle.state()
                    self._checkpoint("best.pt")
                self.schedule.epochs_since_improvement = self.stopper.since
                log.info("epoch %d m2s %.4f p_sobel %.2f", epoch, loss, self.schedule.p_sobel)
                if self.stopper.should_stop:
                    self.stopped_epoch = epoch
                    break
            self._checkpoint("final.pt")
        finally:
            self.close()
        if self.best_state is not None:
            self.bundle.load_state(self.best_state)
        return self.bundle


def _as_images(dataset):
    if hasattr(dataset, "entries"):
        from .data import load_arrays

        return load_arrays(dataset)[0]
    return list(dataset)


def fit(dataset, cfg: TrainingConfig, bundle=None, log_path=None, checkpoint_dir=None) -> ModelBundle:
    """Pretrain the patch filler if needed, then run the unsupervised loop with early stopping."""
    images = _as_images(dataset)
    if not images:
        raise ConfigurationError("dataset is empty")
    return Trainer(cfg, bundle, log_path, checkpoint_dir).fit(images)


# -- supervised stages ----------------------------------------------------------------


def labels_for_fraction(n_labelled: int, fraction: float) -> int:
    """Number of labelled images a fraction selects (round half up, at least one)."""
    return max(1, min(n_labelled, int(math.floor(fraction * n_labelled + 0.5))))


def _segmentation_loss(pred, target, cfg):
    w = cfg.weights
    return bce_loss(target, pred, w.clamp_eps, w.bce_reduction) + tversky_loss(pred, target, w)


def _labelled_batches(pairs, batch_size, spec, rng):
    order = rng.permutation(len(pairs))
    for start in range(0, len(order), batch_size):
        imgs, masks = [], []
        for i in order[start : start + batch_size]:
            image, mask = pairs[i]
            image, mask = augment(image, mask, spec, rng)
            imgs.append(image)
            masks.append(mask.astype(np.float32))
        yield to_tensor(imgs), to_tensor(masks)


def fine_tune(bundle: ModelBundle, pairs, fraction: float, cfg: TrainingConfig, rng=None) -> ModelBundle:
    """Continue training on a labelled fraction with BCE + Tversky.

    Only ``m2s`` is updated unless ``cfg.finetune_full_chain`` is set, in
    which case each batch also runs a real-path step with the true masks as
    the ``s2e`` input.
    """
    pairs = list(pairs)
    if not pairs:
        raise ConfigurationError("fine-tuning needs labelled pairs")
    if not 0 < fraction <= 1:
        raise ConfigurationError(f"fraction must lie in (0, 1], got {fraction}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    n_use = labels_for_fraction(len(pairs), fraction)
    chosen = [pairs[i] for i in sorted(rng.permutation(len(pairs))[:n_use])]
    bundle.extras["finetune_labels"] = n_use
    if cfg.finetune_full_chain:
        _check_frozen(bundle)
    g = bundle.g_m2s
    for _ in range(cfg.finetune_epochs):
        g.train()
        for images, masks in _labelled_batches(chosen, cfg.finetune_batch_size, cfg.augment, rng):
            domain = images[:, : cfg.domain_channels]
            loss = _segmentation_loss(g(m2s_input(bundle, domain)), masks, cfg)
            _apply(bundle.optimizers["m2s"], _grads(loss, g))
            if cfg.finetune_full_chain:
                _train_mode(bundle)
                train_step_real(bundle, images, edges_for_batch(images, cfg), cfg, rng, segmentation=masks)
    g.eval()
    return bundle


def train_supervised_baseline(pairs, cfg: TrainingConfig, rng=None) -> ModelBundle:
    """Fully supervised ``m2s`` trained with BCE + Dice; other networks stay untrained."""
    pairs = list(pairs)
    if not pairs:
        raise ConfigurationError("the supervised baseline needs labelled pairs")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    bundle = new_bundle(cfg)
    g = bundle.g_m2s
    opt = bundle.optimizers["m2s"]
    w = cfg.weights
    dice_cfg = replace(cfg, weights=replace(w, alpha=0.5, beta=0.5))
    history = []
    for _ in range(cfg.baseline_epochs):
        g.train()
        losses = []
        for images, masks in _labelled_batches(pairs, cfg.baseline_batch_size, cfg.augment, rng):
            loss = _segmentation_loss(g(m2s_input(bundle, images[:, : cfg.domain_channels])), masks, dice_cfg)
            _apply(opt, _grads(loss, g))
            losses.append(_scalar(loss))
        history.append(float(np.mean(losses)))
    g.eval()
    bundle.extras.update(kind="supervised-baseline", loss_history=history)
    return bundle


def predict_soft(bundle: ModelBundle, image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float32)
    if bundle.g_m2s.spec.in_channels == (1 if image.ndim == 2 else image.shape[2]) + 1:
        img = image if image.ndim == 3 else image[..., None]
        image = np.concatenate([img, style_channel(image, 0)[..., None].astype(np.float32)], axis=2)
    return translate(bundle.g_m2s, image)


def predict_mask(bundle: ModelBundle, image, threshold: float = 0.5) -> np.ndarray:
    """Binary segmentation: ``m2s`` output strictly above ``threshold``."""
    return (predict_soft(bundle, image) > threshold).astype(np.uint8)


__all__ = [
    "EarlyStopping",
    "FrozenStateError",
    "LOG_COLUMNS",
    "ScheduleState",
    "Trainer",
    "fine_tune",
    "fit",
    "labels_for_fraction",
    "predict_mask",
    "pretrain_patch_filler",
    "sobel_probability",
    "train_step_real",
    "train_step_synthetic",
    "train_supervised_baseline",
]
