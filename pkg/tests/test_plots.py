import numpy as np

from adaptivetv import plots
from adaptivetv.mesh import new_uniform, refine
from adaptivetv.newton import NewtonReport
from adaptivetv.pipelines import BenchmarkRow


def test_mesh_figure_written(tmp_path):
    m = refine(new_uniform(4, 4), [5])
    svg = tmp_path / "mesh.svg"
    png = tmp_path / "mesh.png"
    plots.save_mesh_figure(m, svg)
    plots.save_mesh_figure(m, png, values=np.arange(m.n_cells, dtype=float))
    assert svg.stat().st_size > 0
    assert png.stat().st_size > 0


def test_convergence_figure_written(tmp_path):
    rows = [BenchmarkRow("uniform", 0, 64, 0.5, 0.1),
            BenchmarkRow("uniform", 0, 256, 0.3, 0.2),
            BenchmarkRow("adaptive", 1, 100, 0.25, 0.1)]
    path = tmp_path / "conv.png"
    plots.save_convergence_figure(rows, path)
    assert path.stat().st_size > 0


def test_residual_figure_written(tmp_path):
    rep = NewtonReport(iterations=3, final_residual=1e-4,
                       residual_log=[1.0, 1e-2, 1e-4], converged=True)
    path = tmp_path / "res.png"
    plots.save_residual_figure(rep, path)
    assert path.stat().st_size > 0


def test_image_figure_written(tmp_path):
    path = tmp_path / "img.png"
    plots.save_image_figure(np.random.default_rng(0).random((8, 8)), path)
    assert path.stat().st_size > 0
