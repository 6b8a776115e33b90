"""Model parameters, energies, optimality residual and dual projections.

The primal functional combines an L1 term (Huber-smoothed with gamma1), an L2
term, a smoothing term (beta/2)|S v|^2 and the total variation (Huber-smoothed
with gamma2).  The dual functional carries the matching concave terms; both are
evaluated with the mesh-weighted inner products.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import GridFunction, cell_weights


@dataclass
class ModelParams:
    """Non-negative model and solver parameters (Frobenius exponent fixed to 2)."""

    alpha1: float = 0.0
    alpha2: float = 10.0
    lam: float = 1.0
    beta: float = 0.0
    gamma1: float = 2e-4
    gamma2: float = 2e-4
    r: int = 2
    eps: float = 1e-3
    max_it: int = 100

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "lam", "beta", "gamma1", "gamma2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.r != 2:
            raise ValueError("only the Euclidean Frobenius norm (r=2) is supported")


@dataclass
class SolverState:
    """Primal iterate with the two dual variables of the saddle-point system."""

    u: GridFunction
    p1: GridFunction
    p2: GridFunction

    def copy(self):
        return SolverState(self.u.copy(), self.p1.copy(), self.p2.copy())


def huber(x, gamma):
    """Huber smoothing of the absolute value; gamma = 0 gives |x| itself."""
    x = np.asarray(x, dtype=float)
    if gamma == 0.0:
        out = np.abs(x)
    else:
        out = np.where(np.abs(x) <= gamma,
                       x * x / (2.0 * gamma),
                       np.abs(x) - gamma / 2.0)
    return out if out.ndim else float(out)


def frob_r(values, n, m):
    """Per-cell Euclidean norm of a 2m-channel gradient-like vector."""
    v = np.asarray(values, dtype=float).reshape(2 * m, n)
    return np.sqrt(np.sum(v * v, axis=0))


def primal_energy(v, g, ops, params):
    """Huberized primal objective E_h(v) on the mesh of v."""
    mesh = ops.mesh
    w1 = mesh.h ** 2
    tv_res = ops.T @ v.values - g.values
    e = params.alpha1 * float(np.sum(w1 * huber(np.abs(tv_res), params.gamma1)))
    e += 0.5 * params.alpha2 * float(np.sum(w1 * tv_res ** 2))
    if params.beta > 0.0:
        sv = ops.S @ v.values
        ws = cell_weights(mesh, sv.size // mesh.n_cells)
        e += 0.5 * params.beta * float(np.sum(ws * sv ** 2))
    gv = frob_r(ops.grad @ v.values, mesh.n_cells, ops.m)
    e += params.lam * float(np.sum(w1 * huber(gv, params.gamma2)))
    return e


FEAS_SLACK = 1e-12


def dual_feasible(p1, p2, params, m):
    n = p1.mesh.n_cells
    if np.max(np.abs(p1.values)) > params.alpha1 + FEAS_SLACK:
        return False
    if np.max(frob_r(p2.values, n, m)) > params.lam + FEAS_SLACK:
        return False
    return True


def dual_energy(p1, p2, g, ops, params):
    """Concave dual objective D_h; returns -inf for infeasible duals."""
    mesh = ops.mesh
    m = ops.m
    if not dual_feasible(p1, p2, params, m):
        return -np.inf
    w1 = mesh.h ** 2
    wm = cell_weights(mesh, m)
    w2m = cell_weights(mesh, 2 * m)
    w = (ops.T_adj @ p1.values + ops.grad_adj @ p2.values
         - params.alpha2 * (ops.T_adj @ g.values))
    binv_w = ops.B.solve(w)
    d = -0.5 * float(np.sum(wm * w * binv_w))
    d += 0.5 * params.alpha2 * float(np.sum(w1 * g.values ** 2))
    d -= float(np.sum(w1 * g.values * p1.values))
    if params.alpha1 > 0.0:
        d -= 0.5 * params.gamma1 / params.alpha1 * float(np.sum(w1 * p1.values ** 2))
    if params.lam > 0.0:
        d -= 0.5 * params.gamma2 / params.lam * float(np.sum(w2m * p2.values ** 2))
    return d


def weights_m_chi(u, g, ops, params):
    """Active-set weights m1, m2 and indicators chi1, chi2, all per cell."""
    n = ops.mesh.n_cells
    t_res = np.abs(ops.T @ u.values - g.values)
    m1 = np.maximum(params.gamma1, t_res)
    chi1 = (t_res >= params.gamma1).astype(float)
    gnorm = frob_r(ops.grad @ u.values, n, ops.m)
    m2 = np.maximum(params.gamma2, gnorm)
    chi2 = (gnorm >= params.gamma2).astype(float)
    return m1, m2, chi1, chi2


def residual(state, g, ops, params):
    """Mesh-weighted norm of the stacked first-order optimality system."""
    mesh = ops.mesh
    m = ops.m
    n = mesh.n_cells
    u, p1, p2 = state.u, state.p1, state.p2
    m1, m2, _, _ = weights_m_chi(u, g, ops, params)
    t_res = ops.T @ u.values - g.values
    r_u = (ops.T_adj @ p1.values + ops.grad_adj @ p2.values
           - params.alpha2 * (ops.T_adj @ g.values)
           + ops.B.matrix @ u.values)
    r_p1 = m1 * p1.values - params.alpha1 * t_res
    r_p2 = np.tile(m2, 2 * m) * p2.values - params.lam * (ops.grad @ u.values)
    sq = (float(np.sum(cell_weights(mesh, m) * r_u ** 2))
          + float(np.sum(mesh.h ** 2 * r_p1 ** 2))
          + float(np.sum(cell_weights(mesh, 2 * m) * r_p2 ** 2)))
    return np.sqrt(max(sq, 0.0))


def project_duals(state, params):
    """Radially project p1 onto |.| <= alpha1 and p2 cellwise onto |.|_F <= lam."""
    out = state.copy()
    n = out.p1.mesh.n_cells
    m = out.u.m
    a = np.abs(out.p1.values)
    scale1 = np.where(a > params.alpha1, params.alpha1 / np.maximum(a, 1e-300), 1.0)
    out.p1.values *= scale1
    fn = frob_r(out.p2.values, n, m)
    scale2 = np.where(fn > params.lam, params.lam / np.maximum(fn, 1e-300), 1.0)
    out.p2.values *= np.tile(scale2, 2 * m)
    return out
