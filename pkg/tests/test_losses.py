import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from tricyclegan.errors import ConfigurationError, NumericError, ParameterError
from tricyclegan.losses import (
    LossBreakdown,
    LossWeights,
    adversarial_loss,
    bce_loss,
    cycle_loss_e2m,
    cycle_loss_m2s,
    cycle_loss_s2e,
    dice_loss,
    l1_loss,
    total_loss_e2m,
    total_loss_m2s,
    total_loss_s2e,
    tversky_index,
    tversky_loss,
)

TOL = 1e-9


def t64(a):
    return torch.as_tensor(np.asarray(a, dtype=np.float64))


def logit(p):
    return math.log(p / (1 - p))


# brute-force oracles: plain python loops over flattened values


def oracle_l1(a, b):
    a, b = np.ravel(a).tolist(), np.ravel(b).tolist()
    return sum(abs(x - y) for x, y in zip(a, b)) / len(a)


def oracle_bce(y, p, eps=1e-7):
    total = 0.0
    ys, ps = np.ravel(y).tolist(), np.ravel(p).tolist()
    for yi, pi in zip(ys, ps):
        pi = min(max(pi, eps), 1 - eps)
        total += -(yi * math.log(pi) + (1 - yi) * math.log(1 - pi))
    return total / len(ys)


def oracle_tversky_index(pred, gt, alpha=0.5, beta=0.5, eps=1e-6):
    tp = fp = fn = 0.0
    for p, g in zip(np.ravel(pred).tolist(), np.ravel(gt).tolist()):
        tp += p * g
        fp += p * (1 - g)
        fn += (1 - p) * g
    return (tp + eps) / (tp + alpha * fp + beta * fn + eps)


# -- adversarial -----------------------------------------------------------------------


def test_discriminator_loss_at_half_is_two_log_two():
    zeros = torch.zeros(2, 1, 6, 6, dtype=torch.float64)
    assert adversarial_loss(zeros, zeros).item() == pytest.approx(2 * math.log(2), abs=TOL)
    assert 2 * math.log(2) == pytest.approx(1.3863, abs=1e-4)


def test_discriminator_loss_matches_log_oracle():
    p_real, p_fake = 0.8, 0.3
    expected = -(math.log(p_real) + math.log(1 - p_fake))
    got = adversarial_loss(t64([logit(p_real)]), t64([logit(p_fake)])).item()
    assert got == pytest.approx(expected, abs=TOL)


def test_generator_loss_decreases_as_fake_probability_rises():
    ps = np.linspace(0.01, 0.99, 99)
    losses = [adversarial_loss(None, t64([logit(p)]), "generator").item() for p in ps]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    for p, loss in zip(ps, losses):
        assert loss == pytest.approx(-math.log(p), abs=TOL)


def test_adversarial_rejects_nan_and_bad_side():
    with pytest.raises(NumericError):
        adversarial_loss(t64([float("nan")]), t64([0.0]))
    with pytest.raises(ParameterError):
        adversarial_loss(t64([0.0]), t64([0.0]), side="both")


def test_extreme_logits_stay_finite():
    big = t64([1e4, -1e4])
    assert math.isfinite(adversarial_loss(big, big).item())


# -- l1 and cycle terms ----------------------------------------------------------------


def test_l1_identical_is_zero(rng):
    x = t64(rng.random((2, 1, 8, 8)))
    assert l1_loss(x, x).item() == 0.0


def test_l1_random_pair_matches_brute_force(rng):
    a, b = rng.random((3, 2, 7, 5)), rng.random((3, 2, 7, 5))
    assert l1_loss(t64(a), t64(b)).item() == pytest.approx(oracle_l1(a, b), abs=TOL)


def test_l1_shape_mismatch():
    with pytest.raises(ParameterError):
        l1_loss(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 5))


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_l1_triangle_inequality(a, b, c):
    a, b, c = t64(a), t64(b), t64(c)
    assert l1_loss(a, c).item() <= l1_loss(a, b).item() + l1_loss(b, c).item() + 1e-12


def test_cycle_s2e_constant_offset(rng):
    e = rng.random((2, 1, 8, 8)) * 0.5
    assert cycle_loss_s2e(t64(e), t64(e + 0.1)).item() == pytest.approx(0.1, abs=TOL)


def test_cycle_s2e_zero_for_identical(rng):
    e = t64(rng.random((1, 1, 8, 8)))
    assert cycle_loss_s2e(e, e.clone()).item() == 0.0


def test_cycle_e2m_channelwise_brute_force(rng):
    a, b = rng.random((2, 3, 6, 6)), rng.random((2, 3, 6, 6))
    per_channel = [oracle_l1(a[:, c], b[:, c]) for c in range(3)]
    assert cycle_loss_e2m(t64(a), t64(b)).item() == pytest.approx(sum(per_channel) / 3, abs=TOL)


def test_cycle_e2m_shape_mismatch():
    with pytest.raises(ParameterError):
        cycle_loss_e2m(torch.zeros(1, 1, 4, 4), torch.zeros(1, 3, 4, 4))


def test_cycle_m2s_half_prediction(rng):
    mask = (rng.random((1, 1, 8, 8)) > 0.5).astype(np.float64)
    assert cycle_loss_m2s(t64(mask), t64(np.full_like(mask, 0.5))).item() == pytest.approx(0.5, abs=TOL)


def test_cycle_m2s_perfect_binary_reconstruction(rng):
    mask = t64((rng.random((1, 1, 8, 8)) > 0.5).astype(np.float64))
    assert cycle_loss_m2s(mask, mask.clone()).item() == 0.0


# -- bce -------------------------------------------------------------------------------


def test_bce_half_prediction_is_log_two():
    assert bce_loss(t64([1.0, 0.0]), t64([0.5, 0.5])).item() == pytest.approx(math.log(2), abs=TOL)
    assert math.log(2) == pytest.approx(0.6931, abs=1e-4)


def test_bce_random_pair_matches_brute_force(rng):
    y = (rng.random((2, 1, 5, 5)) > 0.5).astype(np.float64)
    p = rng.random((2, 1, 5, 5))
    assert bce_loss(t64(y), t64(p)).item() == pytest.approx(oracle_bce(y, p), abs=TOL)


def test_bce_perfect_prediction_stays_finite_and_small():
    y = t64([1.0, 0.0, 1.0])
    loss = bce_loss(y, y.clone()).item()
    assert math.isfinite(loss) and loss < 1e-6


def test_bce_sum_reduction():
    y, p = t64([1.0, 0.0]), t64([0.5, 0.5])
    assert bce_loss(y, p, reduction="sum").item() == pytest.approx(2 * math.log(2), abs=TOL)


def test_bce_nan_raises():
    with pytest.raises(NumericError):
        bce_loss(t64([1.0]), t64([float("nan")]))


# -- tversky / dice --------------------------------------------------------------------


def _fixture(pred_pixels, gt_pixels, size=6):
    pred, gt = np.zeros((1, 1, size, size)), np.zeros((1, 1, size, size))
    for r, c in pred_pixels:
        pred[0, 0, r, c] = 1
    for r, c in gt_pixels:
        gt[0, 0, r, c] = 1
    return pred, gt


def test_tversky_disjoint():
    pred, gt = _fixture([(0, i) for i in range(6)], [(3, i) for i in range(4)])
    ti = tversky_index(t64(pred), t64(gt)).item()
    assert ti == pytest.approx(oracle_tversky_index(pred, gt), abs=TOL)
    assert ti == pytest.approx(1e-6 / (0.5 * 6 + 0.5 * 4 + 1e-6), abs=TOL)
    assert tversky_loss(t64(pred), t64(gt)).item() == pytest.approx(1 - 2e-7, abs=1e-9)


def test_tversky_two_pixel_overlap():
    pred, gt = _fixture([(0, 0), (0, 1), (0, 2), (0, 3)], [(0, 2), (0, 3), (0, 4), (0, 5)])
    ti = tversky_index(t64(pred), t64(gt)).item()
    assert ti == pytest.approx(oracle_tversky_index(pred, gt), abs=TOL)
    # with a negligible epsilon the hand value 2 / (2 + 1 + 1) appears exactly
    assert tversky_index(t64(pred), t64(gt), epsilon=1e-15).item() == pytest.approx(0.5, abs=TOL)
    dice = 1 - dice_loss(t64(pred), t64(gt), epsilon=1e-15).item()
    assert dice == pytest.approx(2 * 2 / (4 + 4), abs=TOL)


def test_tversky_identical_masks():
    pred, _ = _fixture([(1, 1), (2, 2)], [])
    assert tversky_loss(t64(pred), t64(pred)).item() == pytest.approx(0.0, abs=TOL)


def test_tversky_both_empty_is_one():
    z = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
    assert tversky_index(z, z).item() == 1.0


def test_tversky_dice_equivalence_over_random_pairs():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        size = int(rng.integers(2, 12))
        pred = t64((rng.random((1, 1, size, size)) < rng.random()).astype(np.float64))
        gt = t64((rng.random((1, 1, size, size)) < rng.random()).astype(np.float64))
        assert tversky_loss(pred, gt).item() == pytest.approx(dice_loss(pred, gt, 2e-6).item(), abs=TOL)


def test_tversky_batch_is_mean_of_samples(rng):
    pred, gt = rng.random((3, 1, 5, 5)), (rng.random((3, 1, 5, 5)) > 0.5).astype(np.float64)
    per_sample = [oracle_tversky_index(pred[i], gt[i]) for i in range(3)]
    assert tversky_index(t64(pred), t64(gt)).mean().item() == pytest.approx(np.mean(per_sample), abs=TOL)


def test_tversky_permutation_invariance(rng):
    pred, gt = rng.random(40), (rng.random(40) > 0.5).astype(np.float64)
    perm = rng.permutation(40)
    a = tversky_loss(t64(pred.reshape(1, 1, 5, 8)), t64(gt.reshape(1, 1, 5, 8))).item()
    b = tversky_loss(t64(pred[perm].reshape(1, 1, 5, 8)), t64(gt[perm].reshape(1, 1, 5, 8))).item()
    assert a == pytest.approx(b, abs=TOL)


# -- weighted totals -------------------------------------------------------------------

UNIT = {name: 1.0 for name in LossBreakdown.field_names()}


def test_total_s2e_unit_parts():
    assert total_loss_s2e(UNIT, LossWeights()) == 121.0
    assert total_loss_e2m(UNIT, LossWeights()) == 121.0


def test_total_m2s_unit_parts():
    assert total_loss_m2s(UNIT, LossWeights()) == 32.0
    assert total_loss_m2s(UNIT, LossWeights(m2s_literal_sum=True)) == 32.0


def test_total_m2s_uses_each_cycle_term_once():
    parts = {"cycle_s2e": 1.0, "cycle_e2m": 2.0, "cycle_m2s": 4.0, "bce": 0.0, "tversky": 0.0}
    assert total_loss_m2s(parts, LossWeights()) == 70.0
    # the literal variant swaps cycle_s2e for a second cycle_e2m
    assert total_loss_m2s(parts, LossWeights(m2s_literal_sum=True)) == 80.0


def test_zero_lambda2_drops_cycle_terms():
    parts = {**UNIT, "cycle_s2e": 5.0, "cycle_e2m": 7.0}
    assert total_loss_s2e(parts, LossWeights(lambda2=0.0)) == 101.0


def test_totals_accept_breakdown_objects():
    assert total_loss_s2e(LossBreakdown(**UNIT), LossWeights()) == 121.0


@pytest.mark.parametrize(
    "kwargs",
    [{"lambda1": -1.0}, {"lambda2": float("nan")}, {"epsilon": 0.0}, {"clamp_eps": 0.6}, {"bce_reduction": "max"}],
)
def test_invalid_weights(kwargs):
    with pytest.raises(ConfigurationError):
        LossWeights(**kwargs)


# -- gradient checks -------------------------------------------------------------------


class TinyNet(torch.nn.Module):
    """conv -> tanh -> conv -> sigmoid; 39 parameters for 1 -> 1 channels."""

    def __init__(self, c_in=1, c_out=1):
        super().__init__()
        self.a = torch.nn.Conv2d(c_in, 2, 3, padding=1)
        self.b = torch.nn.Conv2d(2, c_out, 3, padding=1)

    def forward(self, x):
        return torch.sigmoid(self.b(torch.tanh(self.a(x))))


def _chain():
    torch.manual_seed(3)
    nets = {k: TinyNet().double() for k in ("s2e", "pf", "e2m", "m2s")}
    return nets


def _cycle_values(nets, x3):
    e1 = nets["pf"](nets["s2e"](x3))
    img1 = nets["e2m"](e1)
    seg1 = nets["m2s"](img1)
    e2 = nets["pf"](nets["s2e"](seg1))
    img2 = nets["e2m"](e2)
    return e1, img1, seg1, e2, img2


def _losses(nets, x3, target):
    e1, img1, seg1, e2, img2 = _cycle_values(nets, x3)
    return {
        "bce": bce_loss(target, seg1),
        "tversky": tversky_loss(seg1, target),
        "l1": l1_loss(img2, target),
        "cycle_s2e": cycle_loss_s2e(e1, e2),
        "cycle_e2m": cycle_loss_e2m(img1, img2),
        "cycle_m2s": cycle_loss_m2s(x3, seg1),
    }


def _relative_error(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-30))


@pytest.mark.parametrize("name", ["bce", "tversky", "l1", "cycle_s2e", "cycle_e2m", "cycle_m2s"])
def test_gradients_match_central_differences(name):
    nets = _chain()
    params = [p for net in nets.values() for p in net.parameters()]
    assert sum(p.numel() for p in params) <= 1000
    rng = np.random.default_rng(11)
    x3 = t64((rng.random((2, 1, 8, 8)) > 0.5).astype(np.float64))
    target = t64((rng.random((2, 1, 8, 8)) > 0.5).astype(np.float64))

    loss = _losses(nets, x3, target)[name]
    analytic = torch.cat([g.reshape(-1) for g in torch.autograd.grad(loss, params)]).numpy()

    numeric, h = [], 1e-6
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = _losses(nets, x3, target)[name].item()
                flat[i] = orig - h
                down = _losses(nets, x3, target)[name].item()
                flat[i] = orig
                numeric.append((up - down) / (2 * h))
    assert np.abs(analytic).max() > 0
    assert _relative_error(analytic, np.array(numeric)) <= 1e-4
