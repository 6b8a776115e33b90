"""Semi-smooth Newton iteration for the regularized L1-L2-TV saddle problem.

Each step linearizes the pointwise max-terms, solves the (nonsymmetric)
reduced system H d_u = G for the primal increment, recovers the dual
increments in closed form and projects the duals back onto their constraint
sets.  There is no line search.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import GridFunction, cell_weights
from .model import SolverState, project_duals, residual, weights_m_chi

DIRECT_SOLVE_MAX_DOFS = 200_000
KRYLOV_RTOL = 1e-10


class NewtonStepError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class NewtonReport:
    iterations: int = 0
    final_residual: float = np.inf
    residual_log: list = field(default_factory=list)
    converged: bool = False
    hit_max_it: bool = False
    krylov_rtol: float = KRYLOV_RTOL

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iteration", "residual"])
            for i, r in enumerate(self.residual_log):
                wr.writerow([i + 1, r])


def assemble_N(grad_u, n, m):
    """Rank-structured linearization of the Frobenius norm of the gradient.

    Returns the 2m x 2m block matrix (on N-cell diagonal blocks) whose block
    rows all equal (D(v_1) ... D(v_2m)) for the gradient components v_k.
    """
    comps = [sp.diags(np.asarray(grad_u)[k * n:(k + 1) * n]) for k in range(2 * m)]
    row = sp.hstack(comps)
    return sp.vstack([row] * (2 * m)).tocsr()


def assemble_H_G(state, g, ops, params):
    """Newton matrix H and right-hand side G at the current state."""
    mesh = ops.mesh
    n = mesh.n_cells
    m = ops.m
    u, p1, p2 = state.u, state.p1, state.p2
    m1, m2, chi1, chi2 = weights_m_chi(u, g, ops, params)
    t_res = ops.T @ u.values - g.values
    grad_u = ops.grad @ u.values

    inv_m1 = 1.0 / m1
    inv_m2 = 1.0 / m2
    # data-term block: M1^{-1} (alpha1 I - X1 M1^{-1} P1 D(Tu-g))
    data_core = sp.diags(inv_m1) @ (
        params.alpha1 * sp.identity(n)
        - sp.diags(chi1 * inv_m1 * p1.values) @ sp.diags(t_res))
    # TV block: M2^{-1} (lam I - X2 M2^{-1} P2 N(grad u)) on 2mN dofs
    lift = np.tile(inv_m2, 2 * m)
    tv_core = sp.diags(lift) @ (
        params.lam * sp.identity(2 * m * n)
        - sp.diags(np.tile(chi2 * inv_m2, 2 * m) * p2.values)
        @ assemble_N(grad_u, n, m))
    H = (ops.B.matrix
         + ops.T_adj @ data_core @ ops.T
         + ops.grad_adj @ tv_core @ ops.grad).tocsr()

    G = (-(ops.grad_adj @ (params.lam * lift * grad_u))
         - (ops.T_adj @ (params.alpha1 * inv_m1 * t_res))
         - ops.B.matrix @ u.values
         + params.alpha2 * (ops.T_adj @ g.values))
    return H, G


def _rel_residual(H, d, G):
    gnorm = np.linalg.norm(G)
    if gnorm == 0.0:
        return 0.0
    rel = np.linalg.norm(H @ d - G) / gnorm
    return rel if np.isfinite(rel) else np.inf


def _solve_linear(H, G):
    nd = H.shape[0]
    d = None
    if nd <= DIRECT_SOLVE_MAX_DOFS:
        try:
            lu = spla.splu(H.tocsc())
            d = lu.solve(G)
            # a few rounds of iterative refinement rescue ill-conditioned
            # factorizations
            for _ in range(3):
                if _rel_residual(H, d, G) <= 1e-10:
                    break
                d = d + lu.solve(G - H @ d)
        except RuntimeError:
            d = None
        if d is not None and _rel_residual(H, d, G) <= 1e-8:
            return d
    # nonsymmetric Krylov fallback; also rescues (near-)singular factorizations
    try:
        ilu = spla.spilu(H.tocsc(), drop_tol=1e-5, fill_factor=10)
        prec = spla.LinearOperator(H.shape, ilu.solve)
    except RuntimeError:
        prec = None
    dk, info = spla.gmres(H, G, x0=d, rtol=KRYLOV_RTOL, atol=0.0, M=prec,
                          maxiter=500)
    rel = _rel_residual(H, dk, G)
    if rel > 1e-8:
        raise NewtonStepError("inner linear solve too inaccurate",
                              {"relative_residual": rel, "info": info,
                               "dofs": nd})
    return dk


def newton_step(state, g, ops, params):
    """One projected semi-smooth Newton step; returns the new state."""
    mesh = ops.mesh
    n = mesh.n_cells
    m = ops.m
    u, p1, p2 = state.u, state.p1, state.p2
    m1, m2, chi1, chi2 = weights_m_chi(u, g, ops, params)
    t_res = ops.T @ u.values - g.values
    grad_u = ops.grad @ u.values

    H, G = assemble_H_G(state, g, ops, params)
    d_u = _solve_linear(H, G)

    t_d = ops.T @ d_u
    inv_m1 = 1.0 / m1
    d_p1 = (-p1.values
            + inv_m1 * (params.alpha1 * (t_res + t_d)
                        - chi1 * inv_m1 * p1.values * t_res * t_d))
    grad_d = ops.grad @ d_u
    inv_m2_l = np.tile(1.0 / m2, 2 * m)
    n_grad_d = assemble_N(grad_u, n, m) @ grad_d
    d_p2 = (-p2.values
            + inv_m2_l * (params.lam * (grad_u + grad_d)
                          - np.tile(chi2 / m2, 2 * m) * p2.values * n_grad_d))

    new = SolverState(
        GridFunction(mesh, m, u.values + d_u),
        GridFunction(mesh, 1, p1.values + d_p1),
        GridFunction(mesh, 2 * m, p2.values + d_p2),
    )
    return project_duals(new, params)


def default_initial_state(g, ops):
    """Warm start u = T*g with duals taken from the primal candidate."""
    mesh = ops.mesh
    m = ops.m
    u0 = ops.T_adj @ g.values
    return SolverState(
        GridFunction(mesh, m, u0),
        GridFunction(mesh, 1, ops.T @ u0),
        GridFunction(mesh, 2 * m, ops.grad @ u0),
    )


def solve(g, ops, params, initial=None, log_path=None):
    """Run the Newton iteration until the optimality residual meets eps."""
    state = initial.copy() if initial is not None else default_initial_state(g, ops)
    state = project_duals(state, params)
    report = NewtonReport()
    res = residual(state, g, ops, params)
    for it in range(params.max_it):
        if res <= params.eps:
            break
        state = newton_step(state, g, ops, params)
        res = residual(state, g, ops, params)
        report.iterations = it + 1
        report.residual_log.append(res)
    report.final_residual = res
    report.converged = res <= params.eps
    report.hit_max_it = (not report.converged
                         and report.iterations >= params.max_it)
    if log_path is not None:
        report.to_csv(log_path)
    return state, report
