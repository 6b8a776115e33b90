"""Local primal-dual gap indicator and marking strategies for refinement.

The per-cell indicator splits the (regularized) duality gap E_h - D_h into
cell contributions; the shifted version is non-negative and drives Doerfler,
bulk-filtered and fixed-fraction marking.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .mesh import cell_weights
from .model import dual_feasible, frob_r, huber


@dataclass
class IndicatorField:
    """Shifted per-cell error indicator (non-negative, minimum exactly 0)."""

    mesh: object
    eta: np.ndarray
    raw_min: float

    @property
    def total(self):
        return float(np.sum(self.eta))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["id", "cx", "cy", "h", "eta"])
            for i in range(self.mesh.n_cells):
                wr.writerow([i, self.mesh.cx[i], self.mesh.cy[i],
                             self.mesh.h[i], self.eta[i]])


def local_indicator(state, g, ops, params):
    """Cellwise split of the duality gap at a dual-feasible state."""
    mesh = ops.mesh
    n = mesh.n_cells
    m = ops.m
    v, q1, q2 = state.u, state.p1, state.p2
    if not dual_feasible(q1, q2, params, m):
        raise ValueError("dual variables violate their constraint sets")
    h2 = mesh.h ** 2

    t_res = ops.T @ v.values - g.values
    eta = params.alpha1 * huber(np.abs(t_res), params.gamma1)
    eta = eta + 0.5 * params.alpha2 * t_res ** 2
    if params.beta > 0.0:
        sv = ops.S @ v.values
        ch = sv.size // n
        eta = eta + 0.5 * params.beta * np.sum(sv.reshape(ch, n) ** 2, axis=0)
    gnorm = frob_r(ops.grad @ v.values, n, m)
    eta = eta + params.lam * huber(gnorm, params.gamma2)

    w = (ops.T_adj @ q1.values + ops.grad_adj @ q2.values
         - params.alpha2 * (ops.T_adj @ g.values))
    binv_w = ops.B.solve(w)
    eta = eta + 0.5 * np.sum((w * binv_w).reshape(m, n), axis=0)

    eta = eta - 0.5 * params.alpha2 * g.values ** 2
    eta = eta + g.values * q1.values
    if params.alpha1 > 0.0:
        eta = eta + 0.5 * params.gamma1 / params.alpha1 * q1.values ** 2
    if params.lam > 0.0:
        eta = eta + (0.5 * params.gamma2 / params.lam
                     * np.sum(q2.values.reshape(2 * m, n) ** 2, axis=0))
    eta = h2 * eta

    raw_min = float(eta.min())
    return IndicatorField(mesh, eta - raw_min, raw_min)


def dorfler_mark(field, theta, subset=None):
    """Smallest set of largest-indicator cells carrying a theta-fraction.

    With `subset` given, only those cell ids compete (bulk-filtered marking).
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    eta = field.eta
    ids = np.arange(eta.size) if subset is None else np.asarray(sorted(subset))
    if ids.size == 0:
        return set()
    vals = eta[ids]
    order = np.lexsort((ids, -vals))
    target = theta * float(np.sum(vals))
    if target <= 0.0:
        return set()
    csum = np.cumsum(vals[order])
    k = int(np.searchsorted(csum, target - 1e-300)) + 1
    k = min(k, ids.size)
    # theta = 1 with zero-indicator cells: only cells contributing mass
    while k > 0 and vals[order[k - 1]] == 0.0:
        k -= 1
    return set(int(ids[j]) for j in order[:k])


def bulk_filter(u, g, sigma, mesh):
    """Cells whose data residual mass exceeds the noise level sigma."""
    r = u.channel(0) - g.values if u.m >= 1 else u.values - g.values
    if sigma > 0.0:
        keep = 0.5 * mesh.h ** 2 * r ** 2 >= 0.5 * sigma ** 2
    else:
        keep = r != 0.0
    return set(np.flatnonzero(keep).tolist())


def fraction_mark(field, fraction):
    """Top ceil(fraction * N) cells by indicator value, id-ascending ties."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n = field.eta.size
    k = int(np.ceil(fraction * n))
    if k == 0:
        return set()
    order = np.lexsort((np.arange(n), -field.eta))
    return set(int(i) for i in order[:k])
