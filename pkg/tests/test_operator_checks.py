import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pricemfg.grid import Grid
from pricemfg.model import SupplySpec, make_quadratic_model, make_quartic_model, normalize_initial_density
from pricemfg.operator_checks import (Triplet, apply_discrete_operator, consistency_probe,
                                      minimizer_bound, monotonicity_pairing, random_triplet)
from pricemfg.solver import SolverConfig, fixed_point_solve, hj_backward_sweep

CFG = SolverConfig()
G11 = Grid.uniform(-1.0, 1.0, 1.0, 10, 10)


def setup(model, grid=G11):
    mb = normalize_initial_density(model, grid)
    ub = model.u_bar(grid.x)
    Q = SupplySpec().Q(grid.t[:grid.N])
    return mb, ub, Q


@pytest.mark.parametrize("factory", [make_quadratic_model, make_quartic_model])
def test_pairing_vanishes_on_identical_triplets(factory):
    model = factory()
    mb, ub, Q = setup(model)
    w = random_triplet(G11, np.random.default_rng(0), mb, ub)
    assert monotonicity_pairing(w, w, model, G11, Q, CFG) == 0.0


def test_pairing_vanishes_for_shifted_value():
    model = make_quadratic_model()
    mb, ub, Q = setup(model)
    w = random_triplet(G11, np.random.default_rng(1), mb, ub)
    shifted = Triplet(m=w.m, u=w.u + 3.7, varpi=w.varpi)
    assert abs(monotonicity_pairing(w, shifted, model, G11, Q, CFG)) <= 1e-12


@pytest.mark.parametrize("factory", [make_quadratic_model, make_quartic_model])
def test_pairing_nonnegative_random(factory):
    model = factory()
    mb, ub, Q = setup(model)
    rng = np.random.default_rng(7)
    vals = [monotonicity_pairing(random_triplet(G11, rng, mb, ub), random_triplet(G11, rng, mb, ub),
                                 model, G11, Q, CFG) for _ in range(40)]
    assert min(vals) >= -1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-6, 1e-2))
def test_pairing_nonnegative_close_pairs(seed, size):
    model = make_quadratic_model()
    mb, ub, Q = setup(model)
    rng = np.random.default_rng(seed)
    w = random_triplet(G11, rng, mb, ub)
    m = w.m.copy()
    m[:, 1:] = np.abs(m[:, 1:] + size * rng.standard_normal(m[:, 1:].shape))
    u = w.u.copy()
    u[:, :-1] += size * rng.standard_normal(u[:, :-1].shape)
    wt = Triplet(m=m, u=u, varpi=w.varpi + size * rng.standard_normal(G11.N))
    assert monotonicity_pairing(w, wt, model, G11, Q, CFG) >= -1e-9


def test_pairing_symmetric():
    model = make_quartic_model()
    mb, ub, Q = setup(model)
    rng = np.random.default_rng(4)
    w, wt = random_triplet(G11, rng, mb, ub), random_triplet(G11, rng, mb, ub)
    a = monotonicity_pairing(w, wt, model, G11, Q, CFG)
    b = monotonicity_pairing(wt, w, model, G11, Q, CFG)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-14)


def test_random_triplet_properties():
    model = make_quadratic_model()
    mb, ub, _ = setup(model)
    w = random_triplet(G11, np.random.default_rng(5), mb, ub)
    assert np.allclose(w.m.sum(axis=0) * G11.rho, 1.0, atol=1e-12)
    assert np.array_equal(w.m[:, 0], mb) and np.array_equal(w.u[:, -1], ub)
    assert np.max(np.abs(np.diff(w.u[:, :-1], axis=0))) <= 2 * G11.rho
    assert np.all(np.abs(w.varpi) <= 2)


def test_triplet_validation():
    with pytest.raises(ValueError):
        Triplet(m=-np.ones((11, 11)), u=np.zeros((11, 11)), varpi=np.zeros(10))
    with pytest.raises(ValueError):
        Triplet(m=np.ones((11, 10)), u=np.zeros((11, 11)), varpi=np.zeros(10)).check_shape(G11)


def test_hj_residual_zero_for_sweep_values():
    model = make_quadratic_model()
    rng = np.random.default_rng(6)
    varpi = rng.uniform(-1, 1, G11.N)
    u, _ = hj_backward_sweep(model, G11, varpi, CFG)
    m = np.abs(rng.standard_normal((G11.M + 1, G11.N + 1)))
    r, _ = apply_discrete_operator(Triplet(m=m, u=u, varpi=varpi), model, G11, np.zeros(G11.N), CFG)
    assert np.max(np.abs(r.hj)) <= 1e-14


def test_residual_of_converged_solution():
    model = make_quadratic_model()
    g = Grid.from_steps(-1.0, 1.0, 1.0, 0.04, 0.1)
    Q = SupplySpec().Q(g.t[:g.N])
    cfg = SolverConfig(eps=1e-5)
    sol = fixed_point_solve(model, g, Q, cfg)
    r, alpha = apply_discrete_operator(Triplet.from_solution(sol), model, g, Q, cfg)
    hj, tr, bal = r.sup_norms()
    assert hj <= 1e-14 and tr <= 1e-12
    # with c = 1 the balance residual is h times the last price change
    assert bal <= g.h * cfg.eps
    assert np.array_equal(alpha, sol.alpha_star)


def test_minimizer_bound_quadratic():
    model = make_quadratic_model(c=1.0)
    # a^2/2 <= s |a|  <=>  |a| <= 2 s
    assert minimizer_bound(model, 1.25, 0.5) == pytest.approx(3.5, rel=1e-12)


def test_probe_exact_for_affine_data():
    model = make_quadratic_model()
    grids = [Grid.from_steps(-1.0, 1.0, 1.0, h / 2, h) for h in (0.04, 0.02, 0.01)]
    rows = consistency_probe(lambda x, t: x, lambda x, t: 0 * x, lambda x, t: 1 + 0 * x,
                             0.0, model, grids)
    assert max(r.error for r in rows) <= 1e-12


def test_probe_decreases_for_quadratic_data():
    model = make_quadratic_model()
    grids = [Grid.from_steps(-1.0, 1.0, 1.0, h / 2, h) for h in (0.04, 0.02, 0.01)]
    rows = consistency_probe(lambda x, t: x * x + t, lambda x, t: 1 + 0 * x, lambda x, t: 2 * x,
                             0.3, model, grids)
    errs = [r.error for r in rows]
    assert errs[0] / errs[1] >= 1.5 and errs[1] / errs[2] >= 1.5


def test_probe_with_refined_space_steps():
    model = make_quadratic_model()
    grids = [Grid.from_steps(-1.0, 1.0, 1.0, 4.0**-n / 10, 2.0**-n / 10) for n in range(3)]
    rows = consistency_probe(lambda x, t: x * x + t, lambda x, t: 1 + 0 * x, lambda x, t: 2 * x,
                             0.0, model, grids)
    errs = [r.error for r in rows]
    assert errs[0] / errs[1] >= 1.5 and errs[1] / errs[2] >= 1.5


def test_probe_constant_function():
    model = make_quadratic_model()
    grids = [Grid.from_steps(-1.0, 1.0, 1.0, 0.05, 0.1)]
    rows = consistency_probe(lambda x, t: 2.0 + 0 * x, lambda x, t: 0 * x, lambda x, t: 0 * x,
                             0.0, model, grids)
    assert rows[0].error <= 1e-13
