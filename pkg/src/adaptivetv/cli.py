"""Command-line interface: denoising, optical flow, disk benchmark, TV analysis.

Figures (meshes, convergence, residual histories) are rendered next to the
CSV/image outputs.  A key=value config file may preset any model parameter;
explicit command-line flags win.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import io_metrics, pipelines, plots, tv_analysis
from .mesh import GridFunction, new_uniform, refine, sample_image
from .model import ModelParams

DENOISE_DEFAULTS = dict(alpha1=0.0, alpha2=10.0, lam=1.0, beta=0.0)
OPTFLOW_DEFAULTS = dict(alpha1=3.0, alpha2=0.0, lam=1.0, beta=1e-5)


def _add_model_args(p, defaults):
    p.add_argument("--alpha1", type=float, default=defaults["alpha1"],
                   help="L1 data weight")
    p.add_argument("--alpha2", type=float, default=defaults["alpha2"],
                   help="L2 data weight")
    p.add_argument("--lam", type=float, default=defaults["lam"],
                   help="total-variation weight")
    p.add_argument("--beta", type=float, default=defaults["beta"],
                   help="smoothing weight")
    p.add_argument("--gamma1", type=float, default=2e-4,
                   help="Huber smoothing of the L1 term")
    p.add_argument("--gamma2", type=float, default=2e-4,
                   help="Huber smoothing of the TV term")
    p.add_argument("--eps", type=float, default=1e-3,
                   help="Newton stopping tolerance")
    p.add_argument("--max-it", type=int, default=100,
                   help="maximum Newton iterations")


def _model_params(args):
    return ModelParams(alpha1=args.alpha1, alpha2=args.alpha2, lam=args.lam,
                       beta=args.beta, gamma1=args.gamma1, gamma2=args.gamma2,
                       eps=args.eps, max_it=args.max_it)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="adaptivetv",
        description="L1-L2-TV denoising and optical flow on adaptive quad meshes")
    parser.add_argument("--config", help="key=value file presetting options")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for synthetic noise")
    parser.add_argument("--threads", type=int, default=None,
                        help="limit BLAS/LAPACK thread pools")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("denoise", help="image denoising")
    d.add_argument("--input", required=True, help="PGM or PNG image")
    d.add_argument("--sigma", type=float, default=0.0,
                   help="synthetic Gaussian noise level added before solving")
    mode = d.add_mutually_exclusive_group()
    mode.add_argument("--uniform", action="store_true",
                      help="solve on the full pixel mesh")
    mode.add_argument("--adaptive", action="store_true",
                      help="adaptive refinement loop (default)")
    d.add_argument("--theta", type=float, default=0.6,
                   help="Doerfler marking fraction")
    d.add_argument("--max-ref", type=int, default=6,
                   help="number of refinement levels")
    _add_model_args(d, DENOISE_DEFAULTS)
    d.add_argument("--out", required=True, help="output image path")
    d.add_argument("--mesh-out", help="prefix for mesh CSV/SVG exports")
    d.add_argument("--metrics-out", help="metrics CSV path")

    o = sub.add_parser("optflow", help="optical flow estimation")
    o.add_argument("--f0", required=True, help="first frame")
    o.add_argument("--f1", required=True, help="second frame")
    o.add_argument("--gt", help="ground-truth .flo file for error metrics")
    o.add_argument("--warping", choices=("uniform", "adaptive", "none"),
                   default="uniform")
    o.add_argument("--eps-warp", type=float, default=5e-2,
                   help="warping stagnation threshold")
    o.add_argument("--fraction", type=float, default=0.75,
                   help="fixed-fraction marking rate (adaptive warping)")
    o.add_argument("--max-ref", type=int, default=3,
                   help="refinement levels for adaptive warping")
    _add_model_args(o, OPTFLOW_DEFAULTS)
    o.add_argument("--flo-out", help="output .flo path")
    o.add_argument("--color-out", help="color-coded flow PNG path")
    o.add_argument("--metrics-out", help="metrics CSV path (needs --gt)")

    b = sub.add_parser("disk-bench", help="disk convergence benchmark")
    b.add_argument("--radius", type=float, default=1.5)
    b.add_argument("--alphas", default="1,1",
                   help="comma pair alpha1,alpha2")
    b.add_argument("--levels", default="16,32,64",
                   help="comma-separated uniform resolutions")
    b.add_argument("--theta", type=float, default=0.2)
    b.add_argument("--max-ref", type=int, default=4)
    b.add_argument("--lam", type=float, default=1.0)
    b.add_argument("--gamma", type=float, default=2e-4)
    b.add_argument("--eps", type=float, default=1e-3)
    b.add_argument("--csv-out", required=True)

    t = sub.add_parser("tv-analyze", help="refinement impact on discrete TV")
    t.add_argument("--input", required=True)
    t.add_argument("--r", type=int, choices=(1, 2), default=2,
                   help="per-cell norm exponent")
    t.add_argument("--refine-once", action="store_true",
                   help="refine only cells with nonzero gradient "
                        "(default refines every cell)")
    t.add_argument("--csv-out", required=True)
    return parser


def _apply_config(parser, argv):
    pre, _ = parser.parse_known_args(argv)
    if not getattr(pre, "config", None):
        return argv
    overrides = {}
    with open(pre.config) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            overrides[key.replace("-", "_")] = val
    for action in parser._subparsers._group_actions[0].choices.values():
        known = {a.dest for a in action._actions}
        sets = {}
        for key, val in overrides.items():
            if key in known:
                typ = next((a.type for a in action._actions if a.dest == key),
                           None)
                sets[key] = typ(val) if typ else val
        action.set_defaults(**sets)
    return argv


def _limit_threads(n):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(n)
    except ImportError:
        pass


def _write_metrics(path, metrics):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["metric", "value"])
        for key, val in metrics.items():
            wr.writerow([key, val])


def _cmd_denoise(args):
    image = io_metrics.read_image(args.input)
    noisy = pipelines.add_gaussian_noise(image, args.sigma, seed=args.seed)
    params = _model_params(args)
    cfg = pipelines.PipelineConfig(params=params, theta=args.theta,
                                   n_ref_max=args.max_ref, sigma=args.sigma,
                                   seed=args.seed)
    if args.uniform:
        u, report = pipelines.denoise_uniform(noisy, cfg)
        meshes, reports = [u.mesh], [report]
    else:
        u, meshes, reports = pipelines.denoise_adaptive(noisy, cfg)
    out = pipelines.grid_to_raster(u, image.shape)[0]
    io_metrics.write_image(out, args.out)
    if args.mesh_out:
        for i, mesh in enumerate(meshes):
            mesh.to_csv(f"{args.mesh_out}_{i}.csv")
            plots.save_mesh_figure(mesh, f"{args.mesh_out}_{i}.svg")
    if args.metrics_out:
        clipped = np.clip(out, 0.0, 1.0)
        _write_metrics(args.metrics_out, {
            "psnr_noisy": io_metrics.psnr(np.clip(noisy, 0, 1), image),
            "psnr_denoised": io_metrics.psnr(clipped, image),
            "mssim_denoised": io_metrics.mssim(clipped, image),
            "dofs": u.mesh.n_cells,
            "newton_iterations": sum(r.iterations for r in reports),
        })
        root, _ = os.path.splitext(args.metrics_out)
        plots.save_residual_figure(reports[-1], root + "_residual.png")
    return 0


def _cmd_optflow(args):
    f0 = io_metrics.read_image(args.f0)
    f1 = io_metrics.read_image(args.f1)
    params = _model_params(args)
    if args.warping == "none":
        cfg = pipelines.PipelineConfig(params=params, eps_warp=args.eps_warp,
                                       max_warp_iters=1)
        flow, _ = pipelines.optflow_warping(f0, f1, cfg)
        meshes = [flow.mesh]
    elif args.warping == "uniform":
        cfg = pipelines.PipelineConfig(params=params, eps_warp=args.eps_warp)
        flow, _ = pipelines.optflow_warping(f0, f1, cfg)
        meshes = [flow.mesh]
    else:
        cfg = pipelines.PipelineConfig(params=params, eps_warp=args.eps_warp,
                                       n_ref_max=args.max_ref,
                                       fraction=args.fraction,
                                       marking="fraction")
        flow, meshes, _, _ = pipelines.optflow_adaptive(f0, f1, cfg)
    ux, uy = pipelines.flow_to_raster(flow, f0.shape)
    if args.flo_out:
        io_metrics.write_flo(ux, uy, args.flo_out)
    metrics = {"dofs": flow.mesh.n_cells}
    max_mag = None
    if args.gt:
        gx, gy = io_metrics.read_flo(args.gt)
        _, ee_mean, ee_std = io_metrics.endpoint_error(ux, uy, gx, gy)
        _, ae_mean, ae_std = io_metrics.angular_error(ux, uy, gx, gy)
        metrics.update(ee_mean=ee_mean, ee_std=ee_std,
                       ae_mean=ae_mean, ae_std=ae_std)
        known = ~io_metrics.flow_unknown_mask(gx, gy)
        max_mag = float(np.hypot(gx[known], gy[known]).max())
    if args.color_out:
        rgb = io_metrics.flow_to_color(ux, uy, max_mag=max_mag)
        from PIL import Image
        Image.fromarray(rgb, mode="RGB").save(args.color_out)
    if args.metrics_out:
        _write_metrics(args.metrics_out, metrics)
    return 0


def _cmd_disk_bench(args):
    a1, a2 = (float(s) for s in args.alphas.split(","))
    resolutions = [int(s) for s in args.levels.split(",")]
    params = ModelParams(alpha1=a1, alpha2=a2, lam=args.lam, beta=0.0,
                         gamma1=args.gamma, gamma2=args.gamma, eps=args.eps)
    cfg = pipelines.PipelineConfig(params=params, theta=args.theta,
                                   n_ref_max=args.max_ref)
    rows, meshes = pipelines.disk_benchmark(cfg, resolutions,
                                            radius=args.radius)
    pipelines.benchmark_to_csv(rows, args.csv_out)
    root, _ = os.path.splitext(args.csv_out)
    plots.save_convergence_figure(rows, root + "_convergence.png")
    if meshes:
        plots.save_mesh_figure(meshes[-1], root + "_final_mesh.svg")
    peak = pipelines.disk_exact_value(params, args.radius)
    print(f"exact solution: {peak:.6g} inside B(0, {args.radius}), 0 outside")
    return 0


def _cmd_tv_analyze(args):
    image = io_metrics.read_image(args.input)
    ny, nx = image.shape
    coarse = new_uniform(nx, ny)
    u = sample_image(image, coarse)
    if args.refine_once:
        from . import operators
        from .model import frob_r
        gnorm = frob_r(operators.assemble_gradient(coarse) @ u.values,
                       coarse.n_cells, 1)
        marked = np.flatnonzero(gnorm > 0).tolist()
    else:
        marked = range(coarse.n_cells)
    fine = refine(coarse, marked)
    report = tv_analysis.verify_compensation(u, fine, r=args.r)
    mu = tv_analysis.compute_mu(u, fine, r=args.r)
    with open(args.csv_out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["quantity", "value"])
        wr.writerow(["tv_coarse", report.tv_coarse])
        wr.writerow(["tv_fine_unweighted", report.tv_fine_unweighted])
        wr.writerow(["tv_fine_weighted", report.tv_fine_weighted])
        wr.writerow(["mu_min", report.mu_min])
        wr.writerow(["mu_max", report.mu_max])
        wr.writerow(["mu_mean", report.mu_mean])
        wr.writerow(["compensated", report.compensated])
    root, _ = os.path.splitext(args.csv_out)
    hist_path = root + "_mu_hist.csv"
    counts, edges = np.histogram(mu, bins=20, range=(0.0, 1.0))
    with open(hist_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            wr.writerow([lo, hi, int(c)])
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge")
    ax.set_xlabel(r"$\mu$")
    ax.set_ylabel("cells")
    fig.savefig(root + "_mu_hist.png", bbox_inches="tight", dpi=150)
    plt.close(fig)
    return 0


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    args = parser.parse_args(argv)
    _limit_threads(args.threads)
    handlers = {"denoise": _cmd_denoise, "optflow": _cmd_optflow,
                "disk-bench": _cmd_disk_bench, "tv-analyze": _cmd_tv_analyze}
    try:
        return handlers[args.command](args)
    except Exception as exc:  # surface runtime failures as exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
