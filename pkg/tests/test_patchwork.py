import numpy as np
import pytest

from compactpoisson import symexpr as se
from compactpoisson import verify
from compactpoisson.patchwork import (PatchworkError, PointLocationError, SimplexChart, TriangulationData,
                                      assemble_patchwork, face_flatness, pyramid_vertices,
                                      simplex_ball_map, simplex_poisson, two_triangle_square)
from compactpoisson.taper import make_taper

# frozen from tests/oracles/derive_values.py
PHI2_DET_ORIGIN = 2.0


@pytest.fixture(scope="module")
def taper():
    return make_taper("single", 0.1)


@pytest.fixture(scope="module")
def square_10(taper):
    return assemble_patchwork(two_triangle_square((1, 0)), taper, samples=40)


def test_phi2_printed_formula():
    m = simplex_ball_map(2)
    x, y = se.var("x"), se.var("y")
    assert m.components[0] is se.mul(2, se.mul(se.sqrt(se.div(se.add(1, y), se.sub(1, y))), x))
    assert m.components[1] is y


def test_phi2_jacobian_at_origin():
    m = simplex_ball_map(2)
    J = np.array([[se.eval_point(se.diff(c, v), {"x": 0.0, "y": 0.0}) for v in ("x", "y")]
                  for c in m.components])
    assert np.linalg.det(J) == pytest.approx(PHI2_DET_ORIGIN, rel=1e-14)


@pytest.mark.parametrize("y0", [-0.5, 0.0, 0.5])
def test_phi2_edge_lands_on_circle(y0):
    m = simplex_ball_map(2)
    pt = {"x": (1 - y0) / 2, "y": y0}
    img = [se.eval_point(c, pt) for c in m.components]
    assert img[0] == pytest.approx(np.sqrt(1 - y0 ** 2), abs=1e-12)
    assert img[1] == y0


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_phi_fixes_origin(n):
    m = simplex_ball_map(n)
    names = m.source.varnames
    assert all(se.eval_point(c, dict.fromkeys(names, 0.0)) == 0.0 for c in m.components)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_phi_boundary_on_sphere(n):
    err = SimplexChart.standard(n).boundary_radius_error(count=200 if n < 4 else 60)
    assert err <= 1e-9


def test_phi2_injective_on_samples():
    chart = SimplexChart.standard(2)
    pts = chart.sample_interior(400, margin=0.01, seed=2)
    img = chart.phi(pts)
    chart.phi.check_diffeomorphism(pts)
    assert np.all(np.linalg.norm(img, axis=1) < 1)
    d = np.linalg.norm(img[:, None, :] - img[None, :, :], axis=2)
    np.fill_diagonal(d, 1.0)
    assert d.min() > 0


def test_pyramid_vertices():
    assert pyramid_vertices(2) == [(-1, -1), (1, -1), (0, 1)]
    with pytest.raises(PatchworkError):
        pyramid_vertices(0)


def test_simplex_poisson_21(taper):
    f = simplex_poisson(2, 1, taper)
    bc = {"x": np.array([0.0]), "y": np.array([-1 / 3])}
    assert se.evaluate(f[0, 1], bc)[0] > 0
    # edges are exact zeros
    for p in ({"x": 0.0, "y": -1.0}, {"x": 0.25, "y": 0.5}, {"x": -0.25, "y": 0.5}):
        assert se.structurally_zero_at(f[0, 1], p)
    pts = SimplexChart.standard(2).sample_interior(200, margin=0.05, seed=5)
    assert verify.rank_map(f, pts).histogram == {2: 200}


def test_simplex_poisson_20(taper):
    assert simplex_poisson(2, 0, taper).is_structurally_zero()


def test_simplex_poisson_31_jacobi_and_rank(taper):
    f = simplex_poisson(3, 1, taper)
    chart = SimplexChart.standard(3)
    pts = chart.sample_interior(1000, margin=0.02, seed=8)
    rep = verify.jacobi_residual(f, pts)
    assert rep.passed, rep.worst
    inner = chart.sample_interior(100, margin=0.05, seed=9)
    assert verify.rank_map(f, inner).histogram == {2: 100}


def test_simplex_poisson_flat_at_faces(taper):
    f = simplex_poisson(2, 1, taper)
    order, _ = face_flatness(f, pyramid_vertices(2), per_face=3, kmax=4)
    assert order >= 4


def test_simplex_poisson_rank_too_big(taper):
    with pytest.raises(Exception):
        simplex_poisson(2, 2, taper)


def test_square_ranks_and_conformance(square_10):
    rep = square_10.report
    assert rep["pass"], rep
    assert [s["ranks"] for s in rep["simplices"]] == [[2], [0]]
    assert all(s["worst_derivative"] <= 1e-6 for s in rep["shared_faces"])


def test_square_diagonal_vanishes(square_10):
    pts = np.array([[s, s] for s in np.linspace(0.1, 0.9, 9)])
    assert np.all(square_10.evaluate(pts) == 0.0)


def test_square_lattice_histogram(square_10):
    # frozen from tests/oracles/derive_values.py (strict interior lattice points of triangle 1)
    g = verify.GridSpec({"kind": "box", "bounds": [(0, 1), (0, 1)]}, n=60, mode="lattice")
    assert verify.rank_map(square_10.field, g).histogram == {0: 1947, 2: 1653}


def test_square_both_symplectic(taper):
    pw = assemble_patchwork(two_triangle_square((1, 1)), taper, samples=20)
    assert pw.report["pass"]
    assert [s["ranks"] for s in pw.report["simplices"]] == [[2], [2]]
    assert np.all(pw.evaluate([[0.5, 0.5]]) == 0.0)


def test_evaluate_matches_glued_field(square_10):
    pts = np.random.default_rng(3).uniform(0, 1, size=(100, 2))
    a = square_10.evaluate(pts)
    b = square_10.field.dense(pts)
    assert np.allclose(a, b, rtol=0, atol=0)


def test_point_location(square_10):
    assert list(square_10.locate([[0.9, 0.1], [0.1, 0.9], [0.5, 0.5]])) == [0, 1, 0]
    with pytest.raises(PointLocationError):
        square_10.locate([[2.0, 2.0]])


def test_single_simplex_is_simplex_poisson(taper):
    verts = pyramid_vertices(2)
    pw = assemble_patchwork(TriangulationData(verts, [(0, 1, 2)], [1]), taper, certify=False)
    ref = simplex_poisson(2, 1, taper)
    pts = SimplexChart.standard(2).sample_interior(50, seed=4)
    assert np.array_equal(pw.field.dense(pts), ref.dense(pts))


def test_triangulation_validation():
    with pytest.raises(PatchworkError):
        TriangulationData([(0, 0), (1, 0), (0, 1)], [(0, 1)], [0])
    with pytest.raises(PatchworkError):
        TriangulationData([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)], [2])
    with pytest.raises(PatchworkError):
        TriangulationData.from_json({"vertices": [[0, 0]]})
    tri = two_triangle_square()
    assert TriangulationData.from_json(tri.to_json()).simplices == tri.simplices
