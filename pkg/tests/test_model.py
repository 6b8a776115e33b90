import numpy as np
import pytest

from adaptivetv import operators
from adaptivetv.mesh import GridFunction, new_uniform, sample_image
from adaptivetv.model import (ModelParams, SolverState, dual_energy, frob_r,
                              huber, primal_energy, project_duals, residual,
                              weights_m_chi)
from conftest import disk_image


def _denoise_setup(n=4, params=None):
    params = params or ModelParams(alpha1=1.0, alpha2=1.0, lam=1.0, beta=0.0)
    m = new_uniform(n, n)
    ops = operators.build_ops(m, params, "denoise")
    return m, ops, params


def _random_feasible(m, ops, params, rng):
    n = m.n_cells
    u = GridFunction(m, 1, rng.normal(size=n))
    p1 = GridFunction(m, 1, rng.normal(size=n))
    p2 = GridFunction(m, 2, rng.normal(size=2 * n))
    return project_duals(SolverState(u, p1, p2), params)


def test_huber_branch_boundary():
    g = 0.3
    assert np.isclose(huber(g, g), g / 2)


def test_huber_quadratic_branch():
    assert np.isclose(huber(0.05, 0.1), 0.0125)


def test_huber_gamma_zero_is_abs():
    for x in (-1.0, 0.0, 2.0):
        assert huber(x, 0.0) == abs(x)


def test_huber_c1_at_kink():
    g = 0.2
    eps = 1e-9
    left = (huber(g, g) - huber(g - eps, g)) / eps
    right = (huber(g + eps, g) - huber(g, g)) / eps
    assert abs(left - right) < 1e-6 * g


def test_frob_r_examples(rng):
    assert np.allclose(frob_r(np.zeros(8), 4, 1), 0.0)
    v = np.array([3.0, 0, 0, 0, 4.0, 0, 0, 0])
    assert np.isclose(frob_r(v, 4, 1)[0], 5.0)
    w = rng.normal(size=16)
    ref = np.sqrt(np.sum(w.reshape(4, 4) ** 2, axis=0))
    assert np.allclose(frob_r(w, 4, 2), ref)


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(alpha1=-1.0)
    with pytest.raises(ValueError):
        ModelParams(r=1)


def test_primal_energy_at_data_is_tv_only(rng):
    m, ops, params = _denoise_setup()
    g = GridFunction(m, 1, rng.normal(size=m.n_cells))
    e = primal_energy(g, g, ops, params)
    gnorm = frob_r(ops.grad @ g.values, m.n_cells, 1)
    tv = params.lam * float(np.sum(m.h ** 2 * huber(gnorm, params.gamma2)))
    assert np.isclose(e, tv)


def test_primal_energy_constant_case():
    params = ModelParams(alpha1=1.0, alpha2=2.0, lam=1.0, beta=0.0, gamma1=0.1)
    m, ops, _ = _denoise_setup(params=params)
    v = GridFunction(m, 1, np.full(m.n_cells, 0.7))
    g = GridFunction(m, 1, np.full(m.n_cells, 0.2))
    area = float(np.sum(m.h ** 2))
    expect = (params.alpha2 / 2) * 0.25 * area \
        + params.alpha1 * huber(0.5, params.gamma1) * area
    assert np.isclose(primal_energy(v, g, ops, params), expect)


def test_primal_energy_matches_dense_oracle():
    params = ModelParams(alpha1=1.0, alpha2=1.0, lam=1.0, beta=0.0)
    m = new_uniform(16, 16, (-2.0, -2.0, 4.0, 4.0))
    ops = operators.build_ops(m, params, "denoise")
    g = sample_image(disk_image(16), m)
    v = GridFunction(m, 1, 0.5 * g.values)
    # independent per-cell summation
    res = v.values - g.values
    gx = ops.grad @ v.values
    acc = 0.0
    for i in range(m.n_cells):
        h2 = m.h[i] ** 2
        acc += params.alpha1 * h2 * huber(abs(res[i]), params.gamma1)
        acc += 0.5 * params.alpha2 * h2 * res[i] ** 2
        gn = np.hypot(gx[i], gx[m.n_cells + i])
        acc += params.lam * h2 * huber(gn, params.gamma2)
    assert np.isclose(primal_energy(v, g, ops, params), acc, rtol=1e-12)


def test_dual_energy_zero_cases(rng):
    params = ModelParams(alpha1=1.0, alpha2=0.0, lam=1.0, beta=1e-3)
    m = new_uniform(4, 4)
    ops = operators.build_ops(m, params, "denoise")
    z1 = GridFunction(m, 1, np.zeros(m.n_cells))
    z2 = GridFunction(m, 2, np.zeros(2 * m.n_cells))
    g = GridFunction(m, 1, rng.normal(size=m.n_cells))
    assert dual_energy(z1, z2, g, ops, params) == 0.0

    m2, ops2, params2 = _denoise_setup()
    g2 = GridFunction(m2, 1, rng.normal(size=m2.n_cells))
    z1b = GridFunction(m2, 1, np.zeros(m2.n_cells))
    z2b = GridFunction(m2, 2, np.zeros(2 * m2.n_cells))
    # T = Id, beta = 0: the two alpha2 terms cancel exactly
    assert abs(dual_energy(z1b, z2b, g2, ops2, params2)) < 1e-12


def test_dual_energy_infeasible_sentinel():
    m, ops, params = _denoise_setup()
    g = GridFunction(m, 1, np.zeros(m.n_cells))
    p1 = GridFunction(m, 1, np.full(m.n_cells, 2 * params.alpha1 + 1))
    p2 = GridFunction(m, 2, np.zeros(2 * m.n_cells))
    assert dual_energy(p1, p2, g, ops, params) == -np.inf


def test_weak_duality_sampled(rng):
    m, ops, params = _denoise_setup()
    g = GridFunction(m, 1, rng.normal(size=m.n_cells))
    for _ in range(100):
        st = _random_feasible(m, ops, params, rng)
        d = dual_energy(st.p1, st.p2, g, ops, params)
        e = primal_energy(st.u, g, ops, params)
        assert d <= e + 1e-10


def test_primal_energy_convex_on_segments(rng):
    m, ops, params = _denoise_setup()
    g = GridFunction(m, 1, rng.normal(size=m.n_cells))
    for _ in range(20):
        v = GridFunction(m, 1, rng.normal(size=m.n_cells))
        w = GridFunction(m, 1, rng.normal(size=m.n_cells))
        mid = GridFunction(m, 1, 0.5 * (v.values + w.values))
        lhs = primal_energy(mid, g, ops, params)
        rhs = 0.5 * (primal_energy(v, g, ops, params)
                     + primal_energy(w, g, ops, params))
        assert lhs <= rhs + 1e-12


def test_residual_zero_on_trivial_state():
    m, ops, params = _denoise_setup()
    z = GridFunction(m, 1, np.zeros(m.n_cells))
    st = SolverState(z, z.copy(), GridFunction(m, 2, np.zeros(2 * m.n_cells)))
    assert residual(st, z, ops, params) == 0.0


def test_residual_zero_at_single_cell_optimum():
    params = ModelParams(alpha1=0.0, alpha2=2.0, lam=1.0, beta=0.0)
    m = new_uniform(1, 1)
    ops = operators.build_ops(m, params, "denoise")
    g = GridFunction(m, 1, np.array([0.8]))
    # gradient is the zero operator on one cell: u = g is stationary
    st = SolverState(g.copy(), GridFunction(m, 1, np.zeros(1)),
                     GridFunction(m, 2, np.zeros(2)))
    assert residual(st, g, ops, params) < 1e-14


def test_project_duals_examples():
    params = ModelParams(alpha1=0.5, alpha2=1.0, lam=1.0, beta=0.0)
    m = new_uniform(2, 2)
    u = GridFunction(m, 1, np.zeros(4))
    p1 = GridFunction(m, 1, np.array([1.0, -1.0, 0.2, 0.0]))
    p2v = np.zeros(8)
    p2v[0], p2v[4] = 3.0, 4.0
    p2 = GridFunction(m, 2, p2v)
    out = project_duals(SolverState(u, p1, p2), params)
    assert np.allclose(out.p1.values, [0.5, -0.5, 0.2, 0.0])
    assert np.isclose(out.p2.values[0], 0.6)
    assert np.isclose(out.p2.values[4], 0.8)
    # idempotent
    again = project_duals(out, params)
    assert np.allclose(again.p1.values, out.p1.values)
    assert np.allclose(again.p2.values, out.p2.values)


def test_project_duals_never_increases_norms(rng):
    m, ops, params = _denoise_setup()
    for _ in range(10):
        u = GridFunction(m, 1, np.zeros(m.n_cells))
        p1 = GridFunction(m, 1, 3 * rng.normal(size=m.n_cells))
        p2 = GridFunction(m, 2, 3 * rng.normal(size=2 * m.n_cells))
        out = project_duals(SolverState(u, p1, p2), params)
        assert np.all(np.abs(out.p1.values) <= np.abs(p1.values) + 1e-15)
        assert np.all(frob_r(out.p2.values, m.n_cells, 1)
                      <= frob_r(p2.values, m.n_cells, 1) + 1e-15)
        assert np.all(np.abs(out.p1.values) <= params.alpha1 + 1e-12)


def test_weights_m_chi_cases():
    params = ModelParams(alpha1=1.0, alpha2=1.0, lam=1.0, beta=0.0,
                         gamma1=0.1, gamma2=0.1)
    m = new_uniform(2, 2)
    ops = operators.build_ops(m, params, "denoise")
    g = GridFunction(m, 1, np.full(4, 0.3))
    u = g.copy()
    m1, m2, chi1, chi2 = weights_m_chi(u, g, ops, params)
    assert np.allclose(m1, params.gamma1)
    assert np.allclose(chi1, 0.0)
    # boundary case |Tu - g| = gamma1 counts as active
    u2 = GridFunction(m, 1, g.values + params.gamma1)
    m1b, _, chi1b, _ = weights_m_chi(u2, g, ops, params)
    assert np.allclose(m1b, params.gamma1)
    assert np.allclose(chi1b, 1.0)
