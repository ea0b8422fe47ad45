import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from phasefrac.fem import ConstraintError, DofMap, FESpace, apply_dirichlet, gauss_rule, shape_eval
from phasefrac.linsolve import solve_spd
from phasefrac.material import elasticity_matrix
from phasefrac.mesh import BoundaryTag, build_lshape, build_notched_square, build_unit_square

coord = st.floats(-1.0, 1.0)


def test_gauss_rule_weights_and_exactness():
    q = gauss_rule(2)
    assert q.weights.sum() == pytest.approx(4.0, abs=1e-15)
    # bilinear x bilinear products are biquadratic; integrate x^2 y^2 exactly
    f = q.points[:, 0] ** 2 * q.points[:, 1] ** 2
    assert f @ q.weights == pytest.approx(4.0 / 9.0, abs=1e-15)


def test_shape_eval_examples():
    v, _ = shape_eval((0.0, 0.0))
    np.testing.assert_allclose(v, 0.25)
    v, _ = shape_eval((-1.0, -1.0))
    np.testing.assert_array_equal(v, [1.0, 0.0, 0.0, 0.0])
    v, g = shape_eval((0.3, -0.7))
    expected = 0.25 * np.array([0.7 * 1.7, 1.3 * 1.7, 1.3 * 0.3, 0.7 * 0.3])
    np.testing.assert_allclose(v, expected, rtol=1e-15)
    np.testing.assert_allclose(g[0], 0.25 * np.array([-1.7, -0.7]), rtol=1e-15)


@settings(max_examples=100)
@given(coord, coord)
def test_partition_of_unity(x, y):
    v, g = shape_eval((x, y))
    assert abs(v.sum() - 1.0) <= 1e-14
    assert np.all(np.abs(g.sum(axis=0)) <= 1e-14)


def test_dofmap():
    d = DofMap("vector", 5)
    assert d.n_dofs == 10
    np.testing.assert_array_equal(d.node_dofs([2, 3]), [4, 5, 6, 7])
    np.testing.assert_array_equal(d.node_dofs([2, 3], component=1), [5, 7])
    assert DofMap("scalar", 5).n_dofs == 5


def test_strain_examples():
    space = FESpace(build_notched_square(1))
    x, y = space.mesh.nodes.T
    for u, e in [
        (np.column_stack([x, 0 * x]), [[1, 0], [0, 0]]),
        (np.column_stack([-y, x]), [[0, 0], [0, 0]]),
        (np.column_stack([1e-3 * x, -3e-4 * y]), [[1e-3, 0], [0, -3e-4]]),
    ]:
        for el in (0, 7, 15):
            for q in range(4):
                np.testing.assert_allclose(space.strain_at_qp(u.ravel(), el, q), e, atol=1e-15)


def test_mass_and_stiffness_properties():
    space = FESpace(build_notched_square(2))
    M, K = space.mass, space.stiffness
    assert M.sum() == pytest.approx(1.0, rel=1e-14)
    assert np.abs(K @ np.ones(K.shape[0])).max() < 1e-13
    assert (M != M.T).nnz == 0 and (K != K.T).nnz == 0
    np.testing.assert_allclose(space.lumped_mass, np.asarray(M.sum(axis=1)).ravel())


def test_stiffness_center_entry_by_hand():
    # 2x2 grid of 0.5 cells; each square element contributes 2/3 to a vertex diagonal
    space = FESpace(build_unit_square(0))
    centre = int(np.nonzero(np.all(space.mesh.nodes == [0.5, 0.5], axis=1))[0][0])
    assert space.stiffness[centre, centre] == pytest.approx(8.0 / 3.0, rel=1e-14)


def test_lshape_mass_is_area():
    space = FESpace(build_lshape(0))
    assert space.mass.sum() == pytest.approx(187500.0, rel=1e-13)


def test_apply_dirichlet_cases():
    A = sp.csr_matrix(np.array([[4.0, 1.0], [1.0, 3.0]]))
    b = np.array([1.0, 2.0])
    A2, b2 = apply_dirichlet(A, b, {})
    assert (A2 != A).nnz == 0 and np.array_equal(b2, b)
    A3, b3 = apply_dirichlet(A, b, {0: 0.0, 1: 0.0})
    np.testing.assert_array_equal(np.linalg.solve(A3.toarray(), b3), [0.0, 0.0])
    # hand elimination: x0 = c, 3 x1 = 2 - c
    c = 0.5
    A4, b4 = apply_dirichlet(A, b, {0: c})
    np.testing.assert_array_equal(A4.toarray(), [[1.0, 0.0], [0.0, 3.0]])
    np.testing.assert_allclose(b4, [c, 2.0 - c])


def test_apply_dirichlet_conflict():
    A = sp.identity(3, format="csr")
    with pytest.raises(ConstraintError):
        apply_dirichlet(A, np.zeros(3), ([1, 1], [0.0, 1.0]))
    A2, _ = apply_dirichlet(A, np.zeros(3), ([1, 1], [2.0, 2.0]))
    assert A2.shape == (3, 3)


def test_apply_dirichlet_keeps_symmetry():
    space = FESpace(build_notched_square(1))
    K = space.stiffness + space.mass
    dofs = space.mesh.nodes_with_tag(BoundaryTag.TOP)
    A, _ = apply_dirichlet(K, np.ones(K.shape[0]), (dofs, 1.0))
    assert abs(A - A.T).max() == 0.0


def _affine(nodes):
    G = np.array([[1.0e-3, 4.0e-4], [-2.0e-4, 6.0e-4]])
    c = np.array([1.0e-3, -2.0e-3])
    return (nodes @ G.T + c).ravel(), G


def test_patch_test():
    space = FESpace(build_unit_square(2))
    mesh = space.mesh
    C = elasticity_matrix(80.77, 121.15)
    K = space.assemble_elasticity(np.broadcast_to(C, space.B.shape[:2] + (3, 3)))
    exact, _ = _affine(mesh.nodes)
    bnd = np.unique(np.concatenate([mesh.nodes_with_tag(t) for t in BoundaryTag if mesh.has_tag(t)]))
    dofs = np.concatenate([2 * bnd, 2 * bnd + 1])
    A, b = apply_dirichlet(K, np.zeros(K.shape[0]), (dofs, exact[dofs]))
    u = solve_spd(A, b)
    assert np.abs(u - exact).max() <= 1e-10 * np.abs(exact).max()


def test_face_quadrature_lengths_and_normals():
    space = FESpace(build_notched_square(2))
    for tag, normal in [(BoundaryTag.TOP, (0, 1)), (BoundaryTag.BOTTOM, (0, -1)), (BoundaryTag.RIGHT, (1, 0))]:
        _, _, w, n = space.face_quadrature(tag)
        assert w.sum() == pytest.approx(1.0, rel=1e-14)
        np.testing.assert_allclose(n, np.broadcast_to(normal, n.shape), atol=1e-15)
    _, _, w, n = space.face_quadrature(BoundaryTag.SLIT_UPPER)
    assert w.sum() == pytest.approx(0.5) and np.all(n[:, 1] == -1.0)
    with pytest.raises(KeyError):
        space.face_quadrature(BoundaryTag.LSHAPE_LOAD)
