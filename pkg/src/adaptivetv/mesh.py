"""Balanced quad-tree meshes of a rectangular domain and per-cell grid functions.

Cells are squares addressed by (level, ix, iy) where (ix, iy) are integer
coordinates on the level-L subdivision of the initial coarse grid.  The y axis
points along image rows, so the "south" neighbor of a cell is the one at
larger y.  Every mesh satisfies the 2:1 balance constraint: edge-adjacent
leaves differ by at most one level.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# directions as (dx, dy) on the integer grid; S is +y (row-down convention)
EAST, WEST, SOUTH, NORTH = 0, 1, 2, 3
_DIR_STEPS = {EAST: (1, 0), WEST: (-1, 0), SOUTH: (0, 1), NORTH: (0, -1)}


class NodeClass(Enum):
    REGULAR = "regular"
    DANGLING1 = "dangling1"
    DANGLING2 = "dangling2"
    DANGLING3 = "dangling3"
    BOUNDARY_NEUMANN = "boundary_neumann"
    BOUNDARY_DIRICHLET = "boundary_dirichlet"


class MeshError(ValueError):
    pass


def _tree_key(leaf, nx0):
    """Deterministic ordering key: root cell row-major, then depth-first path."""
    level, ix, iy = leaf
    rx, ry = ix >> level, iy >> level
    path = []
    for l in range(level - 1, -1, -1):
        path.append(((iy >> l) & 1) * 2 + ((ix >> l) & 1))
    return (ry * nx0 + rx, tuple(path))


class QuadMesh:
    """Immutable balanced quad-tree mesh.

    Attributes
    ----------
    domain : (x0, y0, width, height) in physical units.
    cells : list of (level, ix, iy) leaf keys in deterministic tree order.
    cx, cy, h, level : per-cell numpy arrays.
    neighbors : per cell, tuple of 4 tuples of neighbor ids (E, W, S, N).
    """

    def __init__(self, domain, nx0, ny0, leaves):
        x0, y0, w, h = domain
        if w <= 0 or h <= 0:
            raise MeshError("domain must have positive extent")
        self.domain = (float(x0), float(y0), float(w), float(h))
        self.nx0 = int(nx0)
        self.ny0 = int(ny0)
        self.base_h = w / nx0
        if abs(self.base_h - h / ny0) > 1e-12 * max(abs(w), abs(h)):
            raise MeshError("cells must be square: w/nx must equal h/ny")
        self.cells = sorted(leaves, key=lambda c: _tree_key(c, nx0))
        self.index = {c: i for i, c in enumerate(self.cells)}
        n = len(self.cells)
        self.n_cells = n
        self.level = np.array([c[0] for c in self.cells], dtype=int)
        self.h = self.base_h / (2.0 ** self.level)
        self.cx = x0 + np.array([(c[1] + 0.5) for c in self.cells]) * self.h
        self.cy = y0 + np.array([(c[2] + 0.5) for c in self.cells]) * self.h
        self.max_level = int(self.level.max()) if n else 0
        self.neighbors = [self._build_neighbors(c) for c in self.cells]
        self._check_invariants()

    # -- construction helpers ------------------------------------------------

    def _find_leaf_up(self, level, ix, iy):
        """Deepest leaf at or above (level, ix, iy), or None."""
        l, x, y = level, ix, iy
        while l >= 0:
            leaf = (l, x, y)
            if leaf in self.index:
                return leaf
            l, x, y = l - 1, x >> 1, y >> 1
        return None

    def _build_neighbors(self, cell):
        level, ix, iy = cell
        nmax_x = self.nx0 << level
        nmax_y = self.ny0 << level
        out = []
        for d in (EAST, WEST, SOUTH, NORTH):
            dx, dy = _DIR_STEPS[d]
            jx, jy = ix + dx, iy + dy
            if jx < 0 or jy < 0 or jx >= nmax_x or jy >= nmax_y:
                out.append(())
                continue
            same_or_coarser = self._find_leaf_up(level, jx, jy)
            if same_or_coarser is not None:
                out.append((self.index[same_or_coarser],))
                continue
            # finer: the two children of (level+1) adjacent to the shared edge
            fx, fy = 2 * jx, 2 * jy
            if d == EAST:
                kids = [(level + 1, fx, fy), (level + 1, fx, fy + 1)]
            elif d == WEST:
                kids = [(level + 1, fx + 1, fy), (level + 1, fx + 1, fy + 1)]
            elif d == SOUTH:
                kids = [(level + 1, fx, fy), (level + 1, fx + 1, fy)]
            else:
                kids = [(level + 1, fx, fy + 1), (level + 1, fx + 1, fy + 1)]
            ids = []
            for k in kids:
                if k not in self.index:
                    raise MeshError(f"mesh violates 2:1 balance near cell {cell}")
                ids.append(self.index[k])
            out.append(tuple(ids))
        return tuple(out)

    def _check_invariants(self):
        x0, y0, w, h = self.domain
        area = float(np.sum(self.h ** 2))
        if abs(area - w * h) > 1e-12 * w * h:
            raise MeshError("leaf areas do not tile the domain")
        for i, nbs in enumerate(self.neighbors):
            for d in range(4):
                for j in nbs[d]:
                    if abs(self.level[i] - self.level[j]) > 1:
                        raise MeshError("mesh violates 2:1 balance")

    # -- queries -------------------------------------------------------------

    def neighbor_ids(self, cell_id, direction):
        return self.neighbors[cell_id][direction]

    def is_refinement_of(self, coarse):
        """True if every leaf of self is a leaf of `coarse` or a descendant."""
        if self.domain != coarse.domain or (self.nx0, self.ny0) != (coarse.nx0, coarse.ny0):
            return False
        return all(coarse._find_leaf_up(*c) is not None for c in self.cells)

    def parent_map(self, coarse):
        """For each cell of self, the id of its (ancestor) cell in `coarse`."""
        out = np.empty(self.n_cells, dtype=int)
        for i, c in enumerate(self.cells):
            anc = coarse._find_leaf_up(*c)
            if anc is None:
                raise MeshError("mesh is not a refinement of the given coarse mesh")
            out[i] = coarse.index[anc]
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["id", "cx", "cy", "h", "level"])
            for i in range(self.n_cells):
                wr.writerow([i, self.cx[i], self.cy[i], self.h[i], self.level[i]])


def new_uniform(nx, ny, domain=(0.0, 0.0, 1.0, 1.0)):
    """Uniform quad mesh with nx*ny square cells."""
    if nx < 1 or ny < 1:
        raise MeshError("cell counts must be at least 1")
    leaves = {(0, ix, iy) for ix in range(nx) for iy in range(ny)}
    return QuadMesh(domain, nx, ny, leaves)


def refine(mesh, marked):
    """Refine the marked leaves (by id), then cascade until 2:1 balanced."""
    leaves = set(mesh.cells)
    index_cells = mesh.cells
    queue = deque(index_cells[i] for i in marked)
    for c in queue:
        if c not in leaves:
            raise MeshError(f"marked cell {c} is not a leaf")

    def find_up(level, ix, iy):
        l, x, y = level, ix, iy
        while l >= 0:
            if (l, x, y) in leaves:
                return (l, x, y)
            l, x, y = l - 1, x >> 1, y >> 1
        return None

    while queue:
        cell = queue.popleft()
        if cell not in leaves:
            continue
        level, ix, iy = cell
        leaves.remove(cell)
        for dx in (0, 1):
            for dy in (0, 1):
                leaves.add((level + 1, 2 * ix + dx, 2 * iy + dy))
        # neighbors coarser than the split cell now violate balance
        nmax_x = mesh.nx0 << level
        nmax_y = mesh.ny0 << level
        for d in (EAST, WEST, SOUTH, NORTH):
            sx, sy = _DIR_STEPS[d]
            jx, jy = ix + sx, iy + sy
            if jx < 0 or jy < 0 or jx >= nmax_x or jy >= nmax_y:
                continue
            nb = find_up(level, jx, jy)
            if nb is not None and nb[0] < level:
                queue.append(nb)
    return QuadMesh(mesh.domain, mesh.nx0, mesh.ny0, leaves)


def classify(mesh, cell_id, axis, side):
    """Node class of a cell for the given derivative direction.

    axis is "x" or "y"; side is "forward" or "backward".
    """
    if axis == "x":
        d = EAST if side == "forward" else WEST
    elif axis == "y":
        d = SOUTH if side == "forward" else NORTH
    else:
        raise ValueError("axis must be 'x' or 'y'")
    nbs = mesh.neighbors[cell_id][d]
    if not nbs:
        return NodeClass.BOUNDARY_NEUMANN if side == "forward" else NodeClass.BOUNDARY_DIRICHLET
    if len(nbs) == 2:
        return NodeClass.DANGLING1
    j = nbs[0]
    if mesh.level[j] == mesh.level[cell_id]:
        return NodeClass.REGULAR
    # facing neighbor is coarser: dangling node 2 or 3 depending on which side
    # of the cell the coarse center sits in the transverse direction
    if axis == "x":
        s = 1.0 if mesh.cy[j] > mesh.cy[cell_id] else -1.0
        return NodeClass.DANGLING2 if s < 0 else NodeClass.DANGLING3
    s = 1.0 if mesh.cx[j] > mesh.cx[cell_id] else -1.0
    return NodeClass.DANGLING2 if s > 0 else NodeClass.DANGLING3


@dataclass
class GridFunction:
    """Per-cell values with m channels, stored as one vector of length m*N.

    Channel k occupies the slice [(k-1)*N, k*N) as in the discrete inner
    products; gradient-like fields use 2m channels.
    """

    mesh: QuadMesh
    m: int
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.mesh.n_cells
        if self.values is None:
            self.values = np.zeros(self.m * n)
        else:
            self.values = np.asarray(self.values, dtype=float)
            if self.values.shape != (self.m * n,):
                raise ValueError(
                    f"expected {self.m * n} values, got {self.values.shape}"
                )

    def channel(self, k):
        n = self.mesh.n_cells
        return self.values[k * n:(k + 1) * n]

    def copy(self):
        return GridFunction(self.mesh, self.m, self.values.copy())


def cell_weights(mesh, channels=1):
    """Quadrature weights h_i^2, replicated per channel."""
    return np.tile(mesh.h ** 2, channels)


def dot(u_values, v_values, mesh, channels=1):
    """Mesh-weighted inner product sum_i h_i^2 sum_k u_ki v_ki."""
    return float(np.sum(cell_weights(mesh, channels) * u_values * v_values))


def norm(u_values, mesh, channels=1):
    return np.sqrt(max(dot(u_values, u_values, mesh, channels), 0.0))


def project_fine(coarse_fun, fine_mesh):
    """Piecewise-constant prolongation: children copy the parent value."""
    pmap = fine_mesh.parent_map(coarse_fun.mesh)
    m = coarse_fun.m
    nc = coarse_fun.mesh.n_cells
    nf = fine_mesh.n_cells
    vals = np.empty(m * nf)
    for k in range(m):
        vals[k * nf:(k + 1) * nf] = coarse_fun.values[k * nc + pmap]
    return GridFunction(fine_mesh, m, vals)


def project_coarse(fine_fun, coarse_mesh):
    """Restriction: each coarse value is the mean of the values covering it.

    Area-weighted, which coincides with the arithmetic mean of the four
    children for a one-step refinement and is the identity on shared cells.
    """
    pmap = fine_fun.mesh.parent_map(coarse_mesh)
    m = fine_fun.m
    nf = fine_fun.mesh.n_cells
    nc = coarse_mesh.n_cells
    w = fine_fun.mesh.h ** 2
    wsum = np.bincount(pmap, weights=w, minlength=nc)
    vals = np.empty(m * nc)
    for k in range(m):
        s = np.bincount(pmap, weights=w * fine_fun.channel(k), minlength=nc)
        vals[k * nc:(k + 1) * nc] = s / wsum
    return GridFunction(coarse_mesh, m, vals)


def sample_image(pixels, mesh):
    """L2-projection of a raster onto the mesh (per-cell mean of covered pixels).

    The raster extent is identified with the mesh domain; cell boundaries must
    align with pixel boundaries.
    """
    pixels = np.asarray(pixels, dtype=float)
    ny, nx = pixels.shape
    x0, y0, w, h = mesh.domain
    px = w / nx
    py = h / ny
    if abs(px - py) > 1e-12 * max(px, py):
        raise MeshError("raster pixels are not square on this domain")
    vals = np.empty(mesh.n_cells)
    for i in range(mesh.n_cells):
        hx = mesh.h[i]
        lo_x = (mesh.cx[i] - hx / 2 - x0) / px
        lo_y = (mesh.cy[i] - hx / 2 - y0) / py
        span = hx / px
        i0, j0, k = round(lo_x), round(lo_y), round(span)
        if (abs(lo_x - i0) > 1e-9 or abs(lo_y - j0) > 1e-9
                or abs(span - k) > 1e-9 or k < 1):
            raise MeshError("mesh cell boundaries do not align with pixel boundaries")
        block = pixels[j0:j0 + k, i0:i0 + k]
        if block.shape != (k, k):
            raise MeshError("raster does not cover the mesh domain")
        vals[i] = block.mean()
    return GridFunction(mesh, 1, vals)
