"""End-to-end denoising, optical-flow and benchmark pipelines.

Rasters live on pixel grids (y down, row-major); meshes use pixel units so a
level-0 cell of the coarse grid covers a 2^K x 2^K pixel block after K
refinement levels.  The adaptive loops alternate Newton solves with
indicator-driven refinement; the optical-flow loops add warping steps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimator, newton
from .mesh import (GridFunction, MeshError, new_uniform, project_fine,
                   refine, sample_image)
from .model import ModelParams, project_duals
from .operators import build_ops


@dataclass
class PipelineConfig:
    params: ModelParams = field(default_factory=ModelParams)
    theta: float = 0.6
    n_ref_max: int = 6
    eps_warp: float = 5e-2
    sigma: float = 0.0
    marking: str = "dorfler"
    fraction: float = 0.75
    seed: int = 0
    max_warp_iters: int = 20

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.n_ref_max < 0:
            raise ValueError("n_ref_max must be non-negative")
        if self.eps_warp <= 0.0:
            raise ValueError("eps_warp must be positive")
        if self.marking not in ("dorfler", "fraction"):
            raise ValueError("marking must be 'dorfler' or 'fraction'")


def add_gaussian_noise(image, sigma, seed=0):
    """Additive zero-mean Gaussian noise; values intentionally not clamped."""
    image = np.asarray(image, dtype=float)
    if sigma == 0.0:
        return image.copy()
    rng = np.random.default_rng(seed)
    return image + sigma * rng.standard_normal(image.shape)


def _pixel_domain(image):
    ny, nx = image.shape
    return (0.0, 0.0, float(nx), float(ny))


def _check_divisible(image, k):
    ny, nx = np.asarray(image).shape
    if nx % (1 << k) or ny % (1 << k):
        raise ValueError(
            f"image dimensions {nx}x{ny} must be divisible by 2^{k}")
    return nx >> k, ny >> k


def _mark(fld, u, g, cfg):
    if cfg.marking == "fraction":
        return estimator.fraction_mark(fld, cfg.fraction)
    subset = None
    if cfg.sigma > 0.0:
        subset = estimator.bulk_filter(u, g, cfg.sigma, fld.mesh)
    return estimator.dorfler_mark(fld, cfg.theta, subset=subset)


def _refinable(mesh, marked, max_level):
    return [i for i in marked if mesh.level[i] < max_level]


def denoise_adaptive(image, cfg):
    """Adaptively refined denoising: solve, estimate, mark, refine, repeat."""
    image = np.asarray(image, dtype=float)
    k = cfg.n_ref_max
    nx0, ny0 = _check_divisible(image, k)
    mesh = new_uniform(nx0, ny0, _pixel_domain(image))
    meshes, reports = [mesh], []
    state = None
    for level in range(k + 1):
        g = sample_image(image, mesh)
        ops = build_ops(mesh, cfg.params, "denoise")
        state, rep = newton.solve(g, ops, cfg.params)
        reports.append(rep)
        if level == k:
            break
        fld = estimator.local_indicator(state, g, ops, cfg.params)
        marked = _refinable(mesh, _mark(fld, state.u, g, cfg), k)
        if not marked:
            break
        mesh = refine(mesh, marked)
        meshes.append(mesh)
    return state.u, meshes, reports


def denoise_uniform(image, cfg):
    """Single solve on the uniform pixel-resolution mesh."""
    image = np.asarray(image, dtype=float)
    ny, nx = image.shape
    mesh = new_uniform(nx, ny, _pixel_domain(image))
    g = sample_image(image, mesh)
    ops = build_ops(mesh, cfg.params, "denoise")
    state, rep = newton.solve(g, ops, cfg.params)
    return state.u, rep


# ----------------------------------------------------------------------------
# optical flow


def warp_image(f1, flow_x, flow_y):
    """Backward warp: per-pixel bilinear sample of f1 at x + u(x).

    Displacements that leave the image keep the original pixel value.
    """
    f1 = np.asarray(f1, dtype=float)
    ny, nx = f1.shape
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    px = ii + np.asarray(flow_x).reshape(ny, nx)
    py = jj + np.asarray(flow_y).reshape(ny, nx)
    i0 = np.floor(px).astype(int)
    j0 = np.floor(py).astype(int)
    inside = (px >= 0) & (py >= 0) & (px <= nx - 1) & (py <= ny - 1)
    i0c = np.clip(i0, 0, nx - 2)
    j0c = np.clip(j0, 0, ny - 2)
    tx = np.clip(px - i0c, 0.0, 1.0)
    ty = np.clip(py - j0c, 0.0, 1.0)
    out = ((1 - tx) * (1 - ty) * f1[j0c, i0c]
           + tx * (1 - ty) * f1[j0c, i0c + 1]
           + (1 - tx) * ty * f1[j0c + 1, i0c]
           + tx * ty * f1[j0c + 1, i0c + 1])
    return np.where(inside, out, f1)


def _pixel_cell_ids(mesh, shape):
    ny, nx = shape
    level = int(round(np.log2(nx / mesh.nx0)))
    if mesh.nx0 << level != nx or mesh.ny0 << level != ny:
        raise MeshError("pixel grid is not a power-of-two refinement of the mesh")
    ids = np.empty(ny * nx, dtype=int)
    for j in range(ny):
        for i in range(nx):
            leaf = mesh._find_leaf_up(level, i, j)
            if leaf is None:
                raise MeshError("mesh does not cover the pixel grid")
            ids[j * nx + i] = mesh.index[leaf]
    return ids


def grid_to_raster(u, shape):
    """Piecewise-constant evaluation of a grid function on the pixel grid."""
    ny, nx = shape
    mesh = u.mesh
    if mesh.n_cells == nx * ny and mesh.max_level == 0 and mesh.nx0 == nx:
        return [u.channel(k).reshape(ny, nx).copy() for k in range(u.m)]
    ids = _pixel_cell_ids(mesh, shape)
    return [u.channel(k)[ids].reshape(ny, nx) for k in range(u.m)]


def flow_to_raster(u, shape):
    """Piecewise-constant evaluation of a 2-channel flow on the pixel grid."""
    ux, uy = grid_to_raster(u, shape)
    return ux, uy


def _warp_residual(fw, f0, mesh):
    d = sample_image(fw - f0, mesh)
    return float(np.sqrt(np.sum(mesh.h ** 2 * d.values ** 2)))


def _warp_rounds(f0, f1, mesh, flow, cfg):
    """Warping iterations on a fixed mesh until the residual stagnates."""
    shape = np.asarray(f0).shape
    last = None
    prev_res = None
    for _ in range(cfg.max_warp_iters):
        ux, uy = flow_to_raster(flow, shape)
        fw = warp_image(f1, ux, uy)
        res = _warp_residual(fw, f0, mesh)
        if prev_res is not None:
            if prev_res <= 0.0 or (prev_res - res) / prev_res <= cfg.eps_warp:
                break
        prev_res = res
        fw_h = sample_image(fw, mesh)
        f0_h = sample_image(np.asarray(f0, dtype=float), mesh)
        ops = build_ops(mesh, cfg.params, "optflow", f1=fw_h)
        g = GridFunction(mesh, 1,
                         ops.T @ flow.values - (fw_h.values - f0_h.values))
        # warm start from the current flow estimate
        init = newton.SolverState(
            flow.copy(),
            GridFunction(mesh, 1, ops.T @ flow.values),
            GridFunction(mesh, 4, ops.grad @ flow.values))
        state, rep = newton.solve(g, ops, cfg.params, initial=init)
        flow = state.u
        last = (state, g, ops, rep)
    return flow, last


def optflow_warping(f0, f1, cfg):
    """Optical flow with warping on the uniform pixel mesh."""
    f0 = np.asarray(f0, dtype=float)
    ny, nx = f0.shape
    mesh = new_uniform(nx, ny, _pixel_domain(f0))
    flow = GridFunction(mesh, 2)
    flow, last = _warp_rounds(f0, f1, mesh, flow, cfg)
    reports = [last[3]] if last else []
    return flow, reports


def optflow_adaptive(f0, f1, cfg):
    """Coarse-to-fine flow: warping rounds, then fraction-marked refinement."""
    f0 = np.asarray(f0, dtype=float)
    k = cfg.n_ref_max
    nx0, ny0 = _check_divisible(f0, k)
    mesh = new_uniform(nx0, ny0, _pixel_domain(f0))
    flow = GridFunction(mesh, 2)
    meshes, reports, level_flows = [mesh], [], []
    for level in range(k + 1):
        flow, last = _warp_rounds(f0, f1, mesh, flow, cfg)
        level_flows.append(flow)
        if last is not None:
            reports.append(last[3])
        if level == k or last is None:
            break
        state, g, ops, _ = last
        state = project_duals(state, cfg.params)
        fld = estimator.local_indicator(state, g, ops, cfg.params)
        marked = _refinable(mesh, estimator.fraction_mark(fld, cfg.fraction), k)
        if not marked:
            break
        mesh = refine(mesh, marked)
        meshes.append(mesh)
        flow = project_fine(flow, mesh)
    return flow, meshes, reports, level_flows


# ----------------------------------------------------------------------------
# disk benchmark


def disk_exact_value(params, radius):
    """Peak value of the exact minimizer for the centered disk datum."""
    if params.alpha2 == 0.0:
        raise ValueError("the closed-form solution requires alpha2 > 0")
    lo = 2.0 / (params.alpha2 + params.alpha1)
    hi = np.inf if params.alpha1 == 0.0 else 2.0 / params.alpha1
    if radius < lo:
        return 0.0
    if radius <= hi:
        return ((params.alpha2 + params.alpha1) / params.alpha2
                - 2.0 / (params.alpha2 * radius))
    return 1.0


def sample_function(func, mesh, oversample=4, fine_oversample=16, edge=None):
    """Per-cell mean of a function by midpoint quadrature.

    Cells intersecting the region marked by `edge(cx, cy, h) -> bool` use the
    finer oversampling rate.
    """
    vals = np.empty(mesh.n_cells)
    for i in range(mesh.n_cells):
        h = mesh.h[i]
        os = oversample
        if edge is not None and edge(mesh.cx[i], mesh.cy[i], h):
            os = fine_oversample
        t = (np.arange(os) + 0.5) / os - 0.5
        xs = mesh.cx[i] + h * t
        ys = mesh.cy[i] + h * t
        gx, gy = np.meshgrid(xs, ys)
        vals[i] = float(np.mean(func(gx, gy)))
    return GridFunction(mesh, 1, vals)


def _disk_edge(radius):
    def near(cx, cy, h):
        r = np.hypot(cx, cy)
        return abs(r - radius) <= np.sqrt(2.0) * h
    return near


def l2_error_vs(u, func, oversample=4, edge=None):
    """Mesh-weighted L2 distance between a grid function and a reference."""
    mesh = u.mesh
    total = 0.0
    for i in range(mesh.n_cells):
        h = mesh.h[i]
        os = oversample
        if edge is not None and edge(mesh.cx[i], mesh.cy[i], h):
            os = 4 * oversample
        t = (np.arange(os) + 0.5) / os - 0.5
        gx, gy = np.meshgrid(mesh.cx[i] + h * t, mesh.cy[i] + h * t)
        total += h * h * float(np.mean((func(gx, gy) - u.values[i]) ** 2))
    return float(np.sqrt(total))


@dataclass
class BenchmarkRow:
    method: str
    level: int
    dofs: int
    error: float
    runtime: float


def disk_benchmark(cfg, resolutions, radius=1.5, adaptive=True):
    """Uniform and adaptive convergence study for the centered-disk datum.

    The datum is the indicator of B(0, radius) on [-2, 2]^2; errors are
    measured against the closed-form minimizer.
    """
    peak = disk_exact_value(cfg.params, radius)
    domain = (-2.0, -2.0, 4.0, 4.0)
    edge = _disk_edge(radius)

    def datum(x, y):
        return (np.hypot(x, y) < radius).astype(float)

    def exact(x, y):
        return peak * (np.hypot(x, y) < radius)

    rows = []
    for n in resolutions:
        t0 = time.perf_counter()
        mesh = new_uniform(n, n, domain)
        g = sample_function(datum, mesh, edge=edge)
        ops = build_ops(mesh, cfg.params, "denoise")
        state, rep = newton.solve(g, ops, cfg.params)
        err = l2_error_vs(state.u, exact, edge=edge)
        rows.append(BenchmarkRow("uniform", 0, mesh.n_cells, err,
                                 time.perf_counter() - t0))

    meshes = []
    if adaptive:
        n0 = min(resolutions)
        mesh = new_uniform(n0, n0, domain)
        for level in range(cfg.n_ref_max + 1):
            t0 = time.perf_counter()
            g = sample_function(datum, mesh, edge=edge)
            ops = build_ops(mesh, cfg.params, "denoise")
            state, rep = newton.solve(g, ops, cfg.params)
            err = l2_error_vs(state.u, exact, edge=edge)
            rows.append(BenchmarkRow("adaptive", level, mesh.n_cells, err,
                                     time.perf_counter() - t0))
            meshes.append(mesh)
            if level == cfg.n_ref_max:
                break
            fld = estimator.local_indicator(state, g, ops, cfg.params)
            marked = _mark(fld, state.u, g, cfg)
            if not marked:
                break
            mesh = refine(mesh, marked)
    return rows, meshes


def benchmark_to_csv(rows, path):
    import csv
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["method", "level", "dofs", "error", "runtime_s"])
        for r in rows:
            wr.writerow([r.method, r.level, r.dofs, r.error, r.runtime])
