"""Sparse finite-difference operators on balanced quad meshes.

Forward/backward derivatives follow the non-uniform stencils for regular and
dangling nodes; forward stencils carry homogeneous Neumann boundary rows
(zero), backward stencils use homogeneous Dirichlet ghost values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import (EAST, NORTH, SOUTH, WEST, MeshError, NodeClass,
                   cell_weights, classify)


class SingularOperatorError(RuntimeError):
    def __init__(self, message, params=None):
        super().__init__(message)
        self.params = params


def _mean_entry(ids):
    w = 1.0 / len(ids)
    return [(j, w) for j in ids]


def assemble_derivative(mesh, axis, side):
    """N x N matrix of the forward or backward derivative along an axis."""
    n = mesh.n_cells
    rows, cols, vals = [], [], []
    sgn = 1.0 if side == "forward" else -1.0
    if axis == "x":
        facing = EAST if side == "forward" else WEST
        opposite = EAST
        trans_pos, trans_neg = SOUTH, NORTH
        trans_coord = mesh.cy
    else:
        facing = SOUTH if side == "forward" else NORTH
        opposite = SOUTH
        trans_pos, trans_neg = EAST, WEST
        trans_coord = mesh.cx

    for i in range(n):
        h = mesh.h[i]
        nbs = mesh.neighbors[i][facing]
        cls = classify(mesh, i, axis, side)
        if cls is NodeClass.BOUNDARY_NEUMANN:
            continue
        if cls is NodeClass.BOUNDARY_DIRICHLET:
            # ghost value 0 beyond the boundary: derivative is u / h
            rows.append(i); cols.append(i); vals.append(1.0 / h)
            continue
        entries = []
        if cls is NodeClass.REGULAR:
            entries = [(nbs[0], 1.0), (i, -1.0)]
            scale = sgn / h
        elif cls is NodeClass.DANGLING1:
            entries = _mean_entry(nbs) + [(i, -1.0)]
            scale = sgn / (0.75 * h)
        else:
            # coarser facing neighbor: companion fine neighbor sits on the
            # same transverse side as the coarse center
            j = nbs[0]
            comp_dir = trans_pos if trans_coord[j] > trans_coord[i] else trans_neg
            comp = mesh.neighbors[i][comp_dir]
            if not comp:
                raise MeshError("dangling stencil misses its companion neighbor")
            entries = [(j, 2.0)] + [(c, -w) for c, w in _mean_entry(comp)] + [(i, -1.0)]
            scale = sgn / (3.0 * h)
        if side == "backward" and not mesh.neighbors[i][opposite]:
            # Dirichlet condition on the divergence: the field vanishes on
            # cells touching the outflow boundary, which makes the backward
            # operator the exact negative adjoint of the forward one on
            # uniform meshes
            entries = [(c, w) for c, w in entries if c != i]
        for c, w in entries:
            rows.append(i); cols.append(c); vals.append(w * scale)
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
    return mat.tocsr()


def assemble_centered(mesh, axis):
    return 0.5 * (assemble_derivative(mesh, axis, "forward")
                  + assemble_derivative(mesh, axis, "backward"))


def assemble_gradient(mesh, m=1):
    """2mN x mN forward-difference gradient in channel-block layout."""
    dx = assemble_derivative(mesh, "x", "forward")
    dy = assemble_derivative(mesh, "y", "forward")
    block = sp.vstack([dx, dy])
    return sp.block_diag([block] * m).tocsr()


def assemble_divergence(mesh, m=1):
    """mN x 2mN backward-difference divergence (diagnostic companion)."""
    dx = assemble_derivative(mesh, "x", "backward")
    dy = assemble_derivative(mesh, "y", "backward")
    block = sp.hstack([dx, dy])
    return sp.block_diag([block] * m).tocsr()


def adjoint(op, w_in, w_out):
    """Adjoint w.r.t. the weighted inner products: W_in^-1 op^T W_out."""
    return (sp.diags(1.0 / w_in) @ op.T @ sp.diags(w_out)).tocsr()


def assemble_T(kind, mesh, m=1, f1=None):
    """Data operator: identity for denoising, image-gradient row for flow."""
    n = mesh.n_cells
    if kind == "denoise":
        return sp.identity(n, format="csr")
    if kind == "optflow":
        if f1 is None:
            raise ValueError("optical flow requires the second frame f1")
        tx = assemble_centered(mesh, "x") @ f1.values
        ty = assemble_centered(mesh, "y") @ f1.values
        # image gradients are meaningless where a neighbor is missing (the
        # ghost-value rows would inject O(u/h) artifacts); no data constraint
        # at those cells
        for i in range(n):
            if not (mesh.neighbors[i][EAST] and mesh.neighbors[i][WEST]):
                tx[i] = 0.0
            if not (mesh.neighbors[i][SOUTH] and mesh.neighbors[i][NORTH]):
                ty[i] = 0.0
        return sp.hstack([sp.diags(tx), sp.diags(ty)]).tocsr()
    raise ValueError(f"unknown operator kind {kind!r}")


@dataclass
class FactoredOperator:
    """Sparse matrix with a reusable factorization for applying the inverse."""

    matrix: sp.csr_matrix
    ridge: float = 0.0

    def __post_init__(self):
        self._lu = None

    def _factor(self):
        if self._lu is None:
            self._lu = spla.splu(self.matrix.tocsc())
        return self._lu

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        lu = self._factor()
        x = lu.solve(b)
        # one iterative-refinement pass; matters when a ridge was needed
        x += lu.solve(b - self.matrix @ x)
        return x


def assemble_B(params, T, S, mesh, m=1, s_channels=None):
    """B = alpha2 T*T + beta S*S with weighted adjoints, plus its factorization.

    A tiny ridge is added only when the factorization reports (near-)
    singularity, which happens e.g. for alpha2 = 0 with S the gradient.
    """
    n = mesh.n_cells
    w_m = cell_weights(mesh, m)
    w_1 = cell_weights(mesh, 1)
    t_adj = adjoint(T, w_m, w_1)
    B = params.alpha2 * (t_adj @ T)
    if params.beta > 0.0:
        if s_channels is None:
            s_channels = S.shape[0] // n
        w_s = cell_weights(mesh, s_channels)
        s_adj = adjoint(S, w_m, w_s)
        B = B + params.beta * (s_adj @ S)
    B = B.tocsr()
    op = FactoredOperator(B)
    if _is_usable(op, m * n):
        return op
    ridged = FactoredOperator((B + 1e-10 * sp.identity(m * n)).tocsr(), ridge=1e-10)
    if _is_usable(ridged, m * n):
        return ridged
    raise SingularOperatorError("B operator is singular and ridge did not help",
                                params=params)


def _is_usable(op, size):
    rng = np.random.default_rng(0)
    b = rng.standard_normal(size)
    try:
        x = op.solve(b)
    except RuntimeError:
        return False
    if not np.all(np.isfinite(x)):
        return False
    res = np.linalg.norm(op.matrix @ x - b) / np.linalg.norm(b)
    return res <= 1e-6


@dataclass
class ProblemOps:
    """Assembled operators of one discrete problem on a fixed mesh."""

    mesh: object
    m: int
    T: sp.csr_matrix
    T_adj: sp.csr_matrix
    grad: sp.csr_matrix
    grad_adj: sp.csr_matrix
    div: sp.csr_matrix
    S: sp.csr_matrix
    s_kind: str
    B: FactoredOperator


def build_ops(mesh, params, kind, f1=None):
    """Assemble all operators of the denoising (m=1) or flow (m=2) problem."""
    m = 1 if kind == "denoise" else 2
    T = assemble_T(kind, mesh, m=m, f1=f1)
    grad = assemble_gradient(mesh, m)
    div = assemble_divergence(mesh, m)
    w_m = cell_weights(mesh, m)
    w_2m = cell_weights(mesh, 2 * m)
    w_1 = cell_weights(mesh, 1)
    t_adj = adjoint(T, w_m, w_1)
    grad_adj = adjoint(grad, w_m, w_2m)
    if kind == "denoise":
        S = sp.identity(m * mesh.n_cells, format="csr")
        s_kind = "identity"
    else:
        S = grad
        s_kind = "gradient"
    B = assemble_B(params, T, S, mesh, m=m)
    return ProblemOps(mesh=mesh, m=m, T=T, T_adj=t_adj, grad=grad,
                      grad_adj=grad_adj, div=div, S=S, s_kind=s_kind, B=B)


def dump_operator(op, path):
    """Write a sparse operator as MatrixMarket coordinate text."""
    from scipy.io import mmwrite
    mmwrite(str(path), sp.coo_matrix(op))
