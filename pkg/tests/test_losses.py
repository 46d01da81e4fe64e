import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayescount.losses import (
    AdaptiveKernel,
    FixedKernel,
    baseline_density,
    baseline_loss,
    bayes_loss,
    expected_counts,
    total_count,
)
from bayescount.scene import DensityGrid, LossConfig, Point2, Scene, ShapeMismatchError

from oracles import central_difference, mp_bayes_plus, naive_expected_counts, rel_err


def random_scene(rng, h, w, n):
    return Scene(h, w, tuple(Point2(rng.uniform(0, h), rng.uniform(0, w)) for _ in range(n)))


ONE_BY_THREE = Scene(1, 3, (Point2(0.5, 1.5),))  # head at the center of cell (0, 1)
ONE_BY_THREE_D = np.array([[0.2, 0.5, 0.1]])
ONE_BY_THREE_CFG = LossConfig(sigma=8, background=True, margin_d=4)


# -- expected counts -------------------------------------------------------

def test_zero_density_zero_counts():
    s = random_scene(np.random.default_rng(0), 8, 8, 4)
    ec = expected_counts(s, np.zeros((8, 8)), LossConfig(sigma=2, background=True, margin_d=3))
    assert np.all(ec.per_head == 0) and ec.background == 0


def test_single_head_takes_all():
    rng = np.random.default_rng(1)
    s = random_scene(rng, 6, 9, 1)
    d = rng.uniform(0, 1, (6, 9))
    ec = expected_counts(s, d, LossConfig(sigma=1.5))
    assert ec.per_head[0] == pytest.approx(d.sum(), rel=1e-14)
    assert ec.background == 0.0


def test_worked_one_by_three():
    e_head, e_bg, loss = mp_bayes_plus([(0.5, 1.5)], ONE_BY_THREE_D.tolist(), 8, 4)
    ec = expected_counts(ONE_BY_THREE, ONE_BY_THREE_D, ONE_BY_THREE_CFG)
    assert ec.per_head[0] == pytest.approx(float(e_head[0]), abs=1e-14)
    assert ec.background == pytest.approx(float(e_bg), abs=1e-14)
    assert ec.per_head[0] == pytest.approx(0.42029, abs=1e-5)
    assert ec.background == pytest.approx(0.37971, abs=1e-5)


def test_shape_mismatch():
    s = Scene(4, 4, (Point2(1, 1),))
    with pytest.raises(ShapeMismatchError):
        expected_counts(s, np.zeros((4, 5)), LossConfig())
    with pytest.raises(ShapeMismatchError):
        bayes_loss(s, np.zeros((3, 4)), LossConfig())
    with pytest.raises(ShapeMismatchError):
        baseline_loss(np.zeros((2, 2)), np.zeros((2, 3)))


def test_matches_naive_oracle():
    rng = np.random.default_rng(2)
    for _ in range(8):
        h, w, n = rng.integers(2, 12), rng.integers(2, 12), rng.integers(1, 6)
        s = random_scene(rng, h, w, n)
        d = rng.uniform(0, 1, (h, w))
        for bg in (False, True):
            cfg = LossConfig(sigma=rng.uniform(0.5, 6), background=bg, margin_d=3.0)
            ec = expected_counts(s, d, cfg, tile_size=5)
            heads = [(p.row, p.col) for p in s.points]
            want = naive_expected_counts(heads, d.tolist(), cfg.sigma, bg, 3.0)
            got = list(ec.per_head) + ([ec.background] if bg else [])
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


@st.composite
def instances(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    h, w = draw(st.integers(1, 16)), draw(st.integers(1, 16))
    n = draw(st.integers(1, 20))
    cfg = LossConfig(sigma=draw(st.floats(0.1, 64)), background=draw(st.booleans()),
                     margin_d=draw(st.floats(0.5, 20)))
    scale = 10.0 ** draw(st.integers(-3, 3))
    return random_scene(rng, h, w, n), rng.uniform(0, scale, (h, w)), cfg


@given(instances())
@settings(max_examples=200, deadline=None)
def test_count_identity(inst):
    s, d, cfg = inst
    ec = expected_counts(s, d, cfg)
    total = total_count(d)
    assert abs(ec.total - total) <= 1e-9 * total
    assert np.all(ec.per_head >= 0) and ec.background >= 0


def test_total_count():
    assert total_count(np.zeros((3, 3))) == 0
    assert total_count(np.array([[0.2, 0.5, 0.1]])) == pytest.approx(0.8, abs=1e-16)
    assert total_count(DensityGrid(np.array([[1e16, 1.0, -0.0]]))) == 1e16 + 1.0
    # compensated summation: ten 0.1s give exactly 1.0
    assert total_count(np.full((2, 5), 0.1)) == 1.0


# -- bayes loss ------------------------------------------------------------

def test_zero_density_loss_is_n():
    s = random_scene(np.random.default_rng(3), 8, 8, 5)
    assert bayes_loss(s, np.zeros((8, 8)), LossConfig(sigma=2)).value == 5.0


def test_empty_scene_rule():
    s = Scene(4, 4)
    d = np.full((4, 4), 0.2)
    lv = bayes_loss(s, d, LossConfig(sigma=2, background=True, margin_d=3))
    assert lv.value == math.fsum(d.ravel())
    assert lv.value == pytest.approx(3.2)
    assert np.all(lv.gradient == 1.0)
    zero = bayes_loss(s, np.zeros((4, 4)), LossConfig())
    assert zero.value == 0 and np.all(zero.gradient == 0)


def test_worked_bayes_plus_loss():
    lv = bayes_loss(ONE_BY_THREE, ONE_BY_THREE_D, ONE_BY_THREE_CFG)
    _, _, oracle = mp_bayes_plus([(0.5, 1.5)], ONE_BY_THREE_D.tolist(), 8, 4)
    assert lv.value == pytest.approx(float(oracle), abs=1e-14)
    assert lv.value == pytest.approx(0.95942, abs=1e-5)


def test_perfect_fit_zero():
    s = Scene(5, 5, (Point2(2.5, 2.5),))
    d = np.zeros((5, 5))
    d[2, 2] = 1.0
    assert bayes_loss(s, d, LossConfig(sigma=1.0)).value == 0.0


def test_monotone_response():
    s = Scene(5, 5, (Point2(2.2, 1.7),))
    base = np.full((5, 5), 1.0 / 25)  # expected count = alpha exactly
    cfg = LossConfig(sigma=2.0)
    for alpha, want in ((0.5, 0.5), (1.0, 0.0), (3.0, 2.0)):
        assert bayes_loss(s, alpha * base, cfg).value == pytest.approx(want, abs=1e-14)


def _kink_free(s, d, cfg):
    ec = expected_counts(s, d, cfg)
    return np.all(np.abs(1 - ec.per_head) > 1e-8) and (not cfg.background or abs(ec.background) > 1e-8)


@pytest.mark.parametrize("background", [False, True])
@pytest.mark.parametrize("distance", ["abs", "squared"])
def test_bayes_gradient_fd(background, distance):
    rng = np.random.default_rng(4)
    checked = 0
    for _ in range(12):
        h, w = rng.integers(2, 8), rng.integers(2, 8)
        s = random_scene(rng, h, w, int(rng.integers(1, 5)))
        d = rng.uniform(0, 0.6, (h, w))
        cfg = LossConfig(sigma=rng.uniform(0.5, 4), background=background, margin_d=2.5, distance=distance)
        if not _kink_free(s, d, cfg):
            continue
        lv = bayes_loss(s, d, cfg)
        fd = central_difference(lambda x: bayes_loss(s, x, cfg).value, d, h=1e-6)
        assert rel_err(lv.gradient, fd) < 1e-6
        checked += 1
    assert checked >= 8


def test_empty_scene_gradient_fd():
    d = np.random.default_rng(5).uniform(0, 1, (3, 4))
    for distance in ("abs", "squared"):
        cfg = LossConfig(distance=distance)
        lv = bayes_loss(Scene(3, 4), d, cfg)
        fd = central_difference(lambda x: bayes_loss(Scene(3, 4), x, cfg).value, d)
        assert rel_err(lv.gradient, fd) < 1e-6


def test_sign_zero_subgradient():
    s = Scene(1, 1, (Point2(0.5, 0.5),))
    lv = bayes_loss(s, np.ones((1, 1)), LossConfig(sigma=1))
    assert lv.value == 0.0 and lv.gradient[0, 0] == 0.0


@given(instances())
@settings(max_examples=100, deadline=None)
def test_loss_nonnegative(inst):
    s, d, cfg = inst
    assert bayes_loss(s, d, cfg).value >= 0


# -- baseline --------------------------------------------------------------

def test_baseline_density_empty():
    g = baseline_density(Scene(5, 7))
    assert g.shape == (5, 7) and total_count(g) == 0


@pytest.mark.parametrize("sigma", [0.01, 0.5, 4.0, 100.0])
def test_baseline_density_unit_mass(sigma):
    s = Scene(16, 12, (Point2(0.0, 11.9),))
    assert total_count(baseline_density(s, FixedKernel(sigma))) == pytest.approx(1.0, abs=1e-12)


def test_baseline_two_heads():
    s = Scene(16, 16, (Point2(3, 3), Point2(10, 12)))
    assert total_count(baseline_density(s, FixedKernel(2.0))) == pytest.approx(2.0, abs=1e-12)


def test_baseline_mass_random_scenes():
    rng = np.random.default_rng(6)
    for _ in range(30):
        n = int(rng.integers(0, 101))
        s = random_scene(rng, 32, 24, n)
        for kernel in (FixedKernel(rng.uniform(0.3, 10)), AdaptiveKernel()):
            assert abs(total_count(baseline_density(s, kernel)) - n) <= 1e-9


def test_adaptive_sigmas_follow_spacing():
    s = Scene(40, 40, (Point2(5, 5), Point2(5, 7), Point2(7, 5), Point2(6, 6), Point2(35, 35)))
    g = baseline_density(s, AdaptiveKernel(beta=0.3)).values
    # the isolated head gets a wide kernel (clamped at shorter side / 4), so its peak is low
    assert g[35, 35] < g[5, 5]


def test_baseline_peak_at_head_cell():
    s = Scene(9, 9, (Point2(4.5, 4.5),))
    g = baseline_density(s, FixedKernel(1.0)).values
    assert np.unravel_index(np.argmax(g), g.shape) == (4, 4)
    np.testing.assert_allclose(g, g.T, atol=1e-17)


def test_baseline_loss_identity():
    g = np.random.default_rng(7).uniform(0, 1, (4, 4))
    lv = baseline_loss(g, g)
    assert lv.value == 0 and np.all(lv.gradient == 0)


def test_baseline_loss_single_cell():
    est = np.zeros((3, 3))
    est[1, 2] = 2.0
    lv = baseline_loss(np.zeros((3, 3)), est)
    assert lv.value == 4.0
    assert lv.gradient[1, 2] == 4.0 and np.count_nonzero(lv.gradient) == 1


def test_baseline_loss_scalar_oracle():
    rng = np.random.default_rng(8)
    gt, est = rng.uniform(0, 1, (4, 4)), rng.uniform(0, 1, (4, 4))
    want = 0.0
    for i in range(4):
        for j in range(4):
            want += (gt[i][j] - est[i][j]) ** 2
    lv = baseline_loss(DensityGrid(gt), DensityGrid(est))
    assert abs(lv.value - want) < 1e-12
    fd = central_difference(lambda x: baseline_loss(gt, x).value, est)
    assert rel_err(lv.gradient, fd) < 1e-6
