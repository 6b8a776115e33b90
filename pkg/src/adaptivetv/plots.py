"""Matplotlib renderings of meshes, grid functions and convergence histories.

All figures are written to files (Agg backend); nothing is shown interactively.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import LineCollection, PatchCollection
from matplotlib.patches import Rectangle


def save_mesh_figure(mesh, path, values=None, linewidth=0.4):
    """Cell-outline rendering of a quad mesh, optionally shaded by values."""
    x0, y0, w, h = mesh.domain
    fig, ax = plt.subplots(figsize=(6, 6 * h / w))
    patches = [Rectangle((mesh.cx[i] - mesh.h[i] / 2, mesh.cy[i] - mesh.h[i] / 2),
                         mesh.h[i], mesh.h[i])
               for i in range(mesh.n_cells)]
    coll = PatchCollection(patches, edgecolor="black", linewidth=linewidth)
    if values is None:
        coll.set_facecolor("none")
    else:
        coll.set_array(np.asarray(values, dtype=float))
        coll.set_cmap("gray")
    ax.add_collection(coll)
    ax.set_xlim(x0, x0 + w)
    ax.set_ylim(y0 + h, y0)  # y axis points down, image convention
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.savefig(path, bbox_inches="tight", dpi=150)
    plt.close(fig)


def save_convergence_figure(rows, path):
    """log-log error-vs-dofs plot for benchmark rows grouped by method."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    methods = sorted({r.method for r in rows})
    for method in methods:
        pts = sorted((r.dofs, r.error) for r in rows if r.method == method)
        ax.loglog([p[0] for p in pts], [p[1] for p in pts],
                  marker="o", label=method)
    ax.set_xlabel("degrees of freedom")
    ax.set_ylabel(r"$L^2$ error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.savefig(path, bbox_inches="tight", dpi=150)
    plt.close(fig)


def save_residual_figure(report, path):
    """Semi-log plot of the Newton residual history."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.semilogy(np.arange(1, len(report.residual_log) + 1),
                report.residual_log, marker="o")
    ax.set_xlabel("Newton iteration")
    ax.set_ylabel("optimality residual")
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(path, bbox_inches="tight", dpi=150)
    plt.close(fig)


def save_image_figure(image, path):
    """Grayscale rendering of a pixel raster."""
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(np.asarray(image, dtype=float), cmap="gray", vmin=0.0, vmax=1.0)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.savefig(path, bbox_inches="tight", dpi=150)
    plt.close(fig)
