import numpy as np
import pytest

from repulsion.couplings import (check_aux_ordering, check_box_monotonicity, check_eps1_monotonicity,
                                 check_eps2_rotated, check_infinite_comparison, check_initial_monotonicity,
                                 check_law_identity, check_penalized_convergence, contraction_kernel,
                                 euler_kernel)
from repulsion.dynamics import InitialLaw, SimConfig
from repulsion.heatkernel import kernel_1d
from repulsion.penalty import PenaltyParams

BASE = SimConfig(1, 2, 0.0125, 0.5, init=InitialLaw(0.4, 0.4))
PEN = PenaltyParams(0.1, 0.1, 0.01)


def _ordered(box, seed=0):
    rng = np.random.default_rng(seed)
    a = 0.3 * np.abs(rng.normal(size=box.size))
    b = a + 0.3 * np.abs(rng.normal(size=box.size))
    return (a, b), (a + 0.2 * rng.random(box.size), b + 0.5)


def test_identical_boxes_give_zero_violation():
    rep = check_box_monotonicity(BASE, BASE.N, seed=1, replicas=10)
    assert rep.max_violation == 0 and rep.passed


@pytest.mark.parametrize("d", [1, 2])
def test_nested_boxes(d):
    cfg = SimConfig(d, 2, 1 / 32, 1.0, init=InitialLaw(0.5, 0.5))
    rep = check_box_monotonicity(cfg, 4, seed=2, replicas=20)
    assert rep.passed and rep.samples > 0


def test_box_monotonicity_needs_support_inside_the_small_box():
    with pytest.raises(ValueError):
        check_box_monotonicity(BASE.with_(boundary=(1.0, 1.0)), 4)
    with pytest.raises(ValueError):
        check_box_monotonicity(BASE, 1)


def test_infinite_comparison_horizon_guard():
    assert check_infinite_comparison(BASE, seed=3, replicas=10).passed
    with pytest.raises(ValueError):
        check_infinite_comparison(BASE.with_(T=9.0, dt=0.0125), seed=3)


def test_initial_monotonicity_equal_data_is_trivial():
    cfg = BASE.with_(scheme="smoothed", penalty=PEN)
    (a, b), _ = _ordered(cfg.box)
    rep = check_initial_monotonicity(cfg, (a, b), (a, b), seed=4, replicas=5)
    assert rep.max_violation == 0


def test_initial_monotonicity_with_euler_kernel():
    cfg = BASE.with_(scheme="smoothed", penalty=PEN)
    lo, hi = _ordered(cfg.box)
    rep = check_initial_monotonicity(cfg, lo, hi, seed=4, replicas=20)
    assert rep.passed, rep.details


def test_continuum_kernel_defect_shrinks_with_dt():
    lo, hi = None, None
    defects = []
    for dt in (0.0125, 0.00625, 0.003125):
        cfg = BASE.with_(scheme="smoothed", penalty=PEN, dt=dt)
        lo, hi = _ordered(cfg.box)
        rep = check_initial_monotonicity(cfg, lo, hi, seed=4, replicas=10, kernel="continuum")
        defects.append(rep.details["bound_violation"])
    assert defects[0] > defects[1] > defects[2]


def test_initial_monotonicity_errors():
    cfg = BASE.with_(scheme="smoothed", penalty=PEN)
    lo, hi = _ordered(cfg.box)
    with pytest.raises(ValueError):
        check_initial_monotonicity(cfg, hi, lo)
    with pytest.raises(ValueError):
        check_initial_monotonicity(BASE, lo, hi)


def test_kernels_agree_as_dt_shrinks():
    t, R = 0.5, 4
    cont = contraction_kernel(1, t, R)
    np.testing.assert_allclose(cont, kernel_1d(t / 2, np.arange(-R, R + 1)))
    errs = [np.abs(euler_kernel(1, t / n, n, R) - cont).max() for n in (10, 40, 160)]
    assert errs[0] > errs[1] > errs[2]
    assert euler_kernel(2, 0.05, 10, 12).sum() == pytest.approx(1.0, abs=1e-12)


def test_eps_chains():
    pc = BASE.with_(scheme="penalized", penalty=PenaltyParams(0.2, 0.1))
    assert check_eps1_monotonicity(pc, [0.2, 0.1, 0.05], seed=5, replicas=20).passed
    assert check_eps1_monotonicity(pc, [0.1, 0.1], seed=5, replicas=5).max_violation == 0
    rc = BASE.with_(scheme="rotated", penalty=PenaltyParams(0.1, 0.2))
    assert check_eps2_rotated(rc, [0.2, 0.1, 0.05], seed=5, replicas=20).passed
    with pytest.raises(ValueError):
        check_eps1_monotonicity(pc, [0.05, 0.1])
    with pytest.raises(ValueError):
        check_eps2_rotated(pc, [0.2, 0.1])


def test_aux_ordering_zero_noise_is_identically_zero():
    cfg = SimConfig(2, 2, 1 / 16, 1.0)
    rep = check_aux_ordering(cfg, seed=6, replicas=10)
    assert rep.passed
    assert rep.details["gap_violation"] <= 1e-12


def test_penalized_convergence_decreases():
    cfg = SimConfig(1, 1, 0.01, 1.0, scheme="smoothed", penalty=PEN)
    ps = [PenaltyParams(2.0**-k, 2.0**-k, 2.0**-k / 10) for k in (2, 4, 6)]
    rep = check_penalized_convergence(cfg, ps, seed=7, replicas=300)
    assert rep.mean_sq[0] > rep.mean_sq[1] > rep.mean_sq[2]
    assert rep.decreasing()
    with pytest.raises(ValueError):
        check_penalized_convergence(cfg, ps, dt_factor=0.5)


def test_law_identity_small_run():
    cfg = SimConfig(1, 4, 0.05, 1.0)
    rep = check_law_identity(cfg, [0.0, 1.0], seed=8, replicas=2000)
    assert rep.mean_gap[0] == 0 and rep.mean_rho[0] == 0
    assert rep.passed
    with pytest.raises(ValueError):
        check_law_identity(cfg, [1.0], seed=8, rho_seed=8)
