import numpy as np
import pytest
from scipy import ndimage

from conftest import y_junction
from vasctree.errors import DataError
from vasctree.loss import (LossConfig, dice_loss, loss_gradients, mse_loss,
                           murray_loss, radius_loss, total_loss)
from vasctree.murray import fixed_table
from vasctree.raster import MaskGrid, ScalarField
from vasctree.skeleton import soft_skeleton
from vasctree.synth import gen_tree


def y_fixture(n=11, r_p=2.0, child=None):
    """Unit-width Y with per-arm radius values in the radius map."""
    child = child if child is not None else r_p * 2 ** (-1 / 3.0)
    c = n // 2
    p = np.zeros((n, n))
    rm = np.zeros((n, n))
    p[1:c + 1, c] = 1.0
    rm[1:c + 1, c] = r_p
    for k in range(1, c):
        p[c + k, c - k] = 1.0
        rm[c + k, c - k] = child
        p[c + k, c + k] = 1.0
        rm[c + k, c + k] = child
    return ScalarField(p), ScalarField(rm)


def test_dice_mse_perfect_prediction():
    gt = np.zeros((6, 6), np.uint8)
    gt[2:4, 1:5] = 1
    p = ScalarField(gt.astype(np.float64))
    assert dice_loss(p, MaskGrid(gt)) < 1e-6
    assert mse_loss(p, MaskGrid(gt)) == 0.0


def test_dice_all_zero_prediction():
    gt = np.zeros((6, 6), np.uint8)
    gt[2:4, 1:5] = 1
    p = ScalarField(np.zeros((6, 6)))
    assert dice_loss(p, MaskGrid(gt)) == pytest.approx(1.0, abs=1e-6)


def test_dice_mse_hand_computed_2x2():
    gt = np.zeros((2, 2), np.uint8)
    gt[0, :] = 1
    p = ScalarField(np.full((2, 2), 0.5))
    eps = 1e-6
    want_dice = 1 - (2 * 1.0 + eps) / (2.0 + 2.0 + eps)
    assert dice_loss(p, MaskGrid(gt)) == pytest.approx(want_dice, abs=1e-12)
    assert mse_loss(p, MaskGrid(gt)) == pytest.approx(0.25, abs=1e-15)


def test_dice_dim_mismatch():
    with pytest.raises(DataError):
        dice_loss(ScalarField(np.zeros((3, 3))), MaskGrid(np.zeros((4, 4), np.uint8)))


def test_radius_loss_examples():
    sk = ScalarField(np.array([[0.0, 1.0, 1.0]]))
    rm_pred = ScalarField(np.array([[1.0, 2.0, 3.0]]))
    rm_gt = ScalarField(np.array([[1.0, 1.0, 1.0]]))
    assert radius_loss(rm_pred, rm_gt, sk) == pytest.approx(1.0, abs=1e-15)
    assert radius_loss(rm_pred, rm_pred, sk) == 0.0
    zero_sk = ScalarField(np.zeros((1, 3)))
    assert radius_loss(rm_pred, rm_gt, zero_sk) == 0.0


def test_murray_loss_no_junctions():
    p = ScalarField(np.zeros((8, 8)))
    rm = ScalarField(np.zeros((8, 8)))
    val, elements = murray_loss(p, rm, fixed_table(3.0))
    assert val == 0.0 and elements == []


def test_murray_loss_consistent_junction():
    p, rm = y_fixture()
    val, elements = murray_loss(p, rm, fixed_table(3.0))
    assert val < 1e-4
    assert len(elements) == 1
    assert elements[0]["alpha_gt"] == pytest.approx(3.0, abs=1e-12)


def test_murray_loss_grows_with_inconsistency():
    losses = []
    for scale in (1.0, 1.05, 1.1, 1.2):
        p, rm = y_fixture(child=2.0 * 2 ** (-1 / 3.0) * scale)
        val, _ = murray_loss(p, rm, fixed_table(3.0))
        losses.append(val)
    assert losses == sorted(losses)
    assert losses[0] < 1e-4 < losses[1]


def test_total_loss_lambda_beta_zero():
    p, rm = y_fixture()
    gt = MaskGrid((p.values > 0.5).astype(np.uint8))
    rm_gt = ScalarField(np.ones_like(rm.values))
    cfg = LossConfig(lam=0.0, beta=0.0)
    rep = total_loss(p, rm, gt, rm_gt, fixed_table(3.0), cfg)
    assert rep.total == pytest.approx(rep.dice + rep.mse, abs=1e-15)
    assert (rep.grad_rm == 0).all()


def test_total_loss_internal_consistency():
    p, rm = y_fixture()
    gt = MaskGrid((p.values > 0.5).astype(np.uint8))
    rm_gt = ScalarField(rm.values.copy())
    cfg = LossConfig()
    rep = total_loss(p, rm, gt, rm_gt, fixed_table(3.0), cfg)
    recomputed = (rep.dice + rep.mse + cfg.lam * sum(rep.murray.values())
                  + cfg.beta * rep.radius)
    assert rep.total == pytest.approx(recomputed, abs=1e-12)
    assert rep.total >= -1e-12
    assert all(v >= -1e-12 for v in
               [rep.dice, rep.mse, rep.radius, *rep.murray.values()])


def test_total_loss_perfect_synthetic_prediction():
    tree = gen_tree(3.0, 2, 6.0, seed=2)
    p = ScalarField(tree.mask.labels.astype(np.float64))
    rm = tree.rm_gt
    rep = total_loss(p, rm, tree.mask, tree.rm_gt, fixed_table(3.0),
                     LossConfig(lam=0.0, beta=0.1))
    assert rep.total < 1e-3


def test_murray_translation_invariance():
    p, rm = y_fixture(n=13)
    val1, _ = murray_loss(p, rm, fixed_table(3.0))
    p2 = ScalarField(np.roll(p.values, (1, 1), (0, 1)))
    rm2 = ScalarField(np.roll(rm.values, (1, 1), (0, 1)))
    val2, _ = murray_loss(p2, rm2, fixed_table(3.0))
    assert val1 == pytest.approx(val2, rel=1e-9)


def _grad_fixture(seed=42, n=16):
    rng = np.random.default_rng(seed)
    c = n // 2
    p = np.full((n, n), 0.04)
    p[2:c + 1, c] = 0.92
    for k in range(1, 6):
        p[c + k, c - k] = 0.92
        p[c + k, c + k] = 0.92
    p[c, c] = 0.92
    p = np.clip(p + rng.uniform(0, 0.02, (n, n)), 0, 1)
    rm = np.full((n, n), 1.2)
    rm[2:c + 1, c] = 2.0
    rm[c, c] = 2.0
    for k in range(1, 6):
        rm[c + k, c - k] = 1.6
        rm[c + k, c + k] = 1.55
    rm += rng.uniform(0, 0.05, (n, n))
    gt = (p > 0.5).astype(np.uint8)
    rm_gt = ndimage.distance_transform_edt(gt)
    return (ScalarField(p), ScalarField(rm), MaskGrid(gt), ScalarField(rm_gt))


def test_gradients_match_finite_differences():
    p, rm, gt, rm_gt = _grad_fixture()
    cfg = LossConfig()
    table = fixed_table(3.0)
    grad_p, grad_rm = loss_gradients(p, rm, gt, rm_gt, table, cfg)

    def total_at(pv, rmv):
        return total_loss(ScalarField(pv), ScalarField(rmv), gt, rm_gt,
                          table, cfg).total

    rng = np.random.default_rng(1)
    h = 1e-4
    checked = failed = 0
    for _ in range(16):
        y, x = (int(v) for v in rng.integers(1, 15, 2))
        for which, grad in (("p", grad_p), ("rm", grad_rm)):
            base = p.values if which == "p" else rm.values
            plus, minus = base.copy(), base.copy()
            plus[y, x] += h
            minus[y, x] -= h
            if which == "p" and (plus[y, x] > 1 or minus[y, x] < 0):
                continue
            if which == "p":
                fd = (total_at(plus, rm.values) - total_at(minus, rm.values)) / (2 * h)
            else:
                fd = (total_at(p.values, plus) - total_at(p.values, minus)) / (2 * h)
            checked += 1
            denom = max(abs(fd), abs(grad[y, x]))
            if denom > 1e-9 and abs(fd - grad[y, x]) / denom > 1e-3:
                failed += 1
    assert checked >= 20
    assert failed / checked <= 0.05


def test_dice_mse_gradient_closed_form():
    gt = np.zeros((2, 2), np.uint8)
    gt[0, :] = 1
    p_np = np.array([[0.6, 0.3], [0.2, 0.1]])
    cfg = LossConfig(lam=0.0, beta=0.0)
    grad_p, _ = loss_gradients(ScalarField(p_np), ScalarField(np.zeros((2, 2))),
                               MaskGrid(gt), ScalarField(np.zeros((2, 2))),
                               fixed_table(3.0), cfg)
    eps = 1e-6
    g = gt.astype(float)
    num = 2 * (p_np * g).sum() + eps
    den = p_np.sum() + g.sum() + eps
    want = -(2 * g * den - num) / den ** 2 + 2 * (p_np - g) / 4.0
    assert grad_p == pytest.approx(want, rel=1e-10)


def test_multiclass_total_loss():
    from vasctree.synth import gen_av_pair

    pair = gen_av_pair(3.0, 2, 6.0, seed=3)
    probs = {1: ScalarField(pair.artery_mask.labels.astype(np.float64)),
             2: ScalarField(pair.vein_mask.labels.astype(np.float64))}
    rm = ScalarField(np.maximum(
        ndimage.distance_transform_edt(pair.artery_mask.labels),
        ndimage.distance_transform_edt(pair.vein_mask.labels)))
    rep = total_loss(probs, rm, pair.labeled, rm, fixed_table(3.0), LossConfig())
    assert set(rep.murray) == {"artery", "vein"}
    assert set(rep.grad_p) == {"artery", "vein"}
    recomputed = (rep.dice + rep.mse + 0.1 * sum(rep.murray.values())
                  + 0.1 * rep.radius)
    assert rep.total == pytest.approx(recomputed, abs=1e-12)


def test_invalid_probability_range():
    with pytest.raises(DataError):
        murray_loss(ScalarField(np.full((4, 4), 1.5)),
                    ScalarField(np.ones((4, 4))), fixed_table(3.0))


def test_loss_report_json():
    p, rm = y_fixture()
    gt = MaskGrid((p.values > 0.5).astype(np.uint8))
    rep = total_loss(p, rm, gt, ScalarField(rm.values.copy()),
                     fixed_table(3.0), LossConfig())
    import json

    doc = json.loads(rep.to_json())
    assert doc["total"] == rep.total
    assert doc["murray"] == rep.murray
