import numpy as np
import pytest

from adaptivetv.mesh import (GridFunction, MeshError, NodeClass, classify,
                             dot, new_uniform, norm, project_coarse,
                             project_fine, refine, sample_image)


def test_uniform_2x2_unit_square():
    m = new_uniform(2, 2)
    assert m.n_cells == 4
    assert np.allclose(m.h, 0.5)
    centers = sorted(zip(m.cx, m.cy))
    assert centers == [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]


def test_uniform_single_cell():
    m = new_uniform(1, 1)
    assert m.n_cells == 1
    assert m.h[0] == 1.0
    assert (m.cx[0], m.cy[0]) == (0.5, 0.5)


def test_uniform_16x16_on_physical_domain():
    m = new_uniform(16, 16, (-2.0, -2.0, 4.0, 4.0))
    assert m.n_cells == 256
    assert np.allclose(m.h, 0.25)
    assert abs(np.sum(m.h ** 2) - 16.0) < 1e-12


def test_uniform_rejects_zero_counts():
    with pytest.raises(ValueError):
        new_uniform(0, 4)


def test_refine_nothing_is_identity():
    m = new_uniform(4, 4)
    m2 = refine(m, [])
    assert m2.n_cells == m.n_cells
    assert np.array_equal(m2.level, m.level)


def test_refine_one_cell_of_2x2_gives_seven_cells():
    m = new_uniform(2, 2)
    # bottom-right in image coordinates: largest cx, largest cy
    target = int(np.argmax(m.cx + m.cy))
    m2 = refine(m, [target])
    assert m2.n_cells == 7
    assert sorted(m2.level) == [0, 0, 0, 1, 1, 1, 1]


def _max_adjacent_level_gap(m):
    gap = 0
    for i in range(m.n_cells):
        for d in range(4):
            for j in m.neighbor_ids(i, d):
                gap = max(gap, abs(int(m.level[i]) - int(m.level[j])))
    return gap


def test_double_refine_triggers_balance_cascade():
    m = new_uniform(4, 4)
    m = refine(m, [5])
    twice = [i for i in range(m.n_cells) if m.level[i] == 1][:1]
    m = refine(m, twice)
    assert _max_adjacent_level_gap(m) <= 1


def test_random_refinements_stay_balanced(rng):
    m = new_uniform(4, 4)
    for _ in range(4):
        marked = rng.choice(m.n_cells, size=max(1, m.n_cells // 5),
                            replace=False)
        m = refine(m, marked.tolist())
        assert _max_adjacent_level_gap(m) <= 1
        assert abs(np.sum(m.h ** 2) - 1.0) < 1e-12


def test_neighbor_list_lengths():
    m = refine(new_uniform(2, 2), [0])
    for i in range(m.n_cells):
        for d in range(4):
            assert len(m.neighbor_ids(i, d)) in (0, 1, 2)


def test_classify_regular_and_boundary():
    m = new_uniform(3, 3)
    center = int(np.argmin((m.cx - 0.5) ** 2 + (m.cy - 0.5) ** 2))
    assert classify(m, center, "x", "forward") == NodeClass.REGULAR
    left = int(np.argmin(m.cx + m.cy))
    assert classify(m, left, "x", "backward") == NodeClass.BOUNDARY_DIRICHLET
    assert classify(m, left, "x", "forward") == NodeClass.REGULAR


def test_classify_dangling_classes_present():
    m = refine(new_uniform(4, 4), [5])
    seen = set()
    for i in range(m.n_cells):
        for axis in ("x", "y"):
            seen.add(classify(m, i, axis, "forward"))
    assert NodeClass.DANGLING1 in seen
    assert NodeClass.DANGLING2 in seen
    assert NodeClass.DANGLING3 in seen


def test_classify_dangling1_is_coarse_beside_fine_pair():
    base = new_uniform(2, 2)
    m = refine(base, [int(np.argmax(base.cx))])
    for i in range(m.n_cells):
        for d, axis in ((0, "x"), (2, "y")):
            if len(m.neighbor_ids(i, d)) == 2:
                assert classify(m, i, axis, "forward") == NodeClass.DANGLING1


def test_cell_order_is_deterministic():
    a = refine(new_uniform(2, 2), [3])
    b = refine(new_uniform(2, 2), [3])
    assert np.array_equal(a.cx, b.cx) and np.array_equal(a.cy, b.cy)


def test_project_fine_constant_fixed_point():
    coarse = new_uniform(2, 2)
    fine = refine(coarse, [0, 3])
    u = GridFunction(coarse, 1, np.ones(4))
    pu = project_fine(u, fine)
    assert np.allclose(pu.values, 1.0)


def test_project_fine_quadruplicates_and_preserves_integral(rng):
    coarse = new_uniform(2, 2)
    target = int(np.argmax(coarse.cx + coarse.cy))
    fine = refine(coarse, [target])
    vals = rng.normal(size=4)
    u = GridFunction(coarse, 1, vals)
    pu = project_fine(u, fine)
    pmap = fine.parent_map(coarse)
    assert np.allclose(pu.values, vals[pmap])
    assert sum(np.isclose(pu.values, vals[target])) >= 4
    assert abs(np.sum(coarse.h ** 2 * vals)
               - np.sum(fine.h ** 2 * pu.values)) < 1e-14


def test_project_coarse_is_child_mean(rng):
    coarse = new_uniform(2, 2)
    fine = refine(coarse, [1])
    vals = np.zeros(7)
    children = np.flatnonzero(fine.level == 1)
    vals[children] = [0.0, 0.0, 0.0, 4.0]
    u = GridFunction(fine, 1, vals)
    cu = project_coarse(u, coarse)
    assert np.isclose(cu.values[1], 1.0)


def test_project_roundtrip_identity(rng):
    coarse = new_uniform(4, 4)
    fine = refine(coarse, [2, 7, 11])
    u = GridFunction(coarse, 1, rng.normal(size=coarse.n_cells))
    back = project_coarse(project_fine(u, fine), coarse)
    assert np.allclose(back.values, u.values)


def test_project_coarse_matches_bruteforce(rng):
    coarse = new_uniform(2, 2)
    fine = refine(coarse, [0, 2])
    vals = rng.normal(size=fine.n_cells)
    u = GridFunction(fine, 1, vals)
    cu = project_coarse(u, coarse)
    pmap = fine.parent_map(coarse)
    for i in range(coarse.n_cells):
        kids = np.flatnonzero(pmap == i)
        assert np.isclose(cu.values[i], vals[kids].mean())


def test_project_fine_rejects_unrelated_mesh():
    coarse = new_uniform(2, 2)
    other = new_uniform(3, 3)
    u = GridFunction(coarse, 1, np.ones(4))
    with pytest.raises(MeshError):
        project_fine(u, other)


def test_sample_image_identity_at_pixel_resolution(rng):
    img = rng.random((4, 4))
    m = new_uniform(4, 4, (0.0, 0.0, 4.0, 4.0))
    g = sample_image(img, m)
    raster = np.empty((4, 4))
    for i in range(m.n_cells):
        raster[int(m.cy[i] - 0.5), int(m.cx[i] - 0.5)] = g.values[i]
    assert np.allclose(raster, img)


def test_sample_image_block_mean():
    img = np.array([[0.2, 0.4], [0.6, 0.8]])
    m = new_uniform(1, 1, (0.0, 0.0, 2.0, 2.0))
    g = sample_image(img, m)
    assert np.isclose(g.values[0], 0.5)


def test_sample_image_checkerboard_midgray():
    img = np.indices((4, 4)).sum(axis=0) % 2
    m = new_uniform(2, 2, (0.0, 0.0, 4.0, 4.0))
    g = sample_image(img.astype(float), m)
    assert np.allclose(g.values, 0.5)


def test_sample_image_rejects_misaligned():
    img = np.zeros((3, 3))
    m = new_uniform(2, 2, (0.0, 0.0, 3.0, 3.0))
    with pytest.raises(ValueError):
        sample_image(img, m)


def test_inner_product_symmetric_positive(rng):
    m = refine(new_uniform(2, 2), [1])
    u = rng.normal(size=m.n_cells)
    v = rng.normal(size=m.n_cells)
    assert np.isclose(dot(u, v, m), dot(v, u, m))
    assert norm(u, m) > 0
    assert np.isclose(norm(u, m) ** 2, dot(u, u, m))


def test_gridfunction_validates_length():
    m = new_uniform(2, 2)
    with pytest.raises(ValueError):
        GridFunction(m, 2, np.zeros(4))
