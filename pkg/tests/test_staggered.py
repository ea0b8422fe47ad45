import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from phasefrac.bench import NOTCHED_MATERIAL, dirichlet_bc
from phasefrac.material import MaterialParams, Variant, degradation, driving_force
from phasefrac.mesh import BoundaryTag, Mesh, build_notched_square, build_unit_square
from phasefrac.staggered import (
    DirichletBC,
    FieldState,
    NewtonError,
    StaggeredConfig,
    eta_field,
    fe_space,
    mechanics_residual,
    mechanics_step,
    phasefield_step,
    residual_check,
    run_loading_step,
    strain_sup,
    xi_update,
)

FULL = MaterialParams(**NOTCHED_MATERIAL, kappa=1e-10, eps=0.1)
SPLIT = FULL.with_(variant=Variant.SPLIT)
fields = arrays(float, 16, elements=st.floats(-2.0, 2.0))


def test_eta_examples():
    assert np.all(eta_field(np.zeros(3), 5.0, np.ones(3), np.ones(3)) == 1.0)
    np.testing.assert_array_equal(eta_field([0.0, 0.0], 1.0, [0.5, 1.0], [1.0, 1.0]), [0.0, 1.0])
    assert eta_field([0.3], 1.0, [0.8], [1.0])[0] == 1.0


def test_xi_examples():
    assert xi_update([0.0], 3.0, [0.7], [0.7])[0] == 0.0
    assert xi_update([1.0], 2.0, [0.8], [1.0])[0] == pytest.approx(0.6)
    assert xi_update([0.1], 1.0, [0.5], [1.0])[0] == 0.0


@given(arrays(float, 16, elements=st.floats(0.0, 10.0)), st.floats(0.0, 1e6), fields, fields)
def test_xi_nonnegative(xi, gamma, phi, prev):
    assert np.all(xi_update(xi, gamma, phi, prev) >= 0.0)


@given(fields, st.floats(0.0, 1e6), fields, fields)
def test_eta_is_indicator(xi, gamma, phi, prev):
    eta = eta_field(xi, gamma, phi, prev)
    assert set(np.unique(eta)) <= {0.0, 1.0}


def _affine_u(mesh, G, c=(0.0, 0.0)):
    return (mesh.nodes @ np.asarray(G).T + np.asarray(c)).ravel()


def _boundary_bc(mesh, u):
    bnd = np.unique(np.concatenate([mesh.nodes_with_tag(t) for t in BoundaryTag if mesh.has_tag(t)]))
    dofs = np.concatenate([2 * bnd, 2 * bnd + 1])
    return DirichletBC(dofs, u[dofs])


def test_strain_sup_examples():
    mesh = build_unit_square(1)
    assert strain_sup(np.zeros(2 * mesh.n_nodes), mesh) == 0.0
    a, b = 3e-3, -4e-3
    assert strain_sup(_affine_u(mesh, np.diag([a, b])), mesh) == pytest.approx(np.hypot(a, b), rel=1e-12)
    assert strain_sup(_affine_u(mesh, [[0, -1e-3], [1e-3, 0]]), mesh) < 1e-17


@pytest.mark.parametrize("params", [FULL, SPLIT])
def test_mechanics_patch(params):
    mesh = build_unit_square(2)
    exact = _affine_u(mesh, [[1e-3, 2e-4], [-1e-4, 5e-4]], (1e-4, 0.0))
    space = fe_space(mesh)
    state = FieldState.intact(space)
    u, newton = mechanics_step(state, state.phi, params, _boundary_bc(mesh, exact), space)
    assert np.abs(u - exact).max() <= 1e-10 * np.abs(exact).max()
    if params.variant is Variant.FULL:
        assert newton == 1


def test_mechanics_zero_data_split():
    mesh = build_notched_square(1)
    space = fe_space(mesh)
    state = FieldState.intact(space)
    phi = np.linspace(0.0, 1.0, mesh.n_nodes)
    u, newton = mechanics_step(state, phi, SPLIT, dirichlet_bc("shear", mesh, 0.0), space)
    assert not u.any() and newton <= 1


def test_mechanics_full_with_stabilization_residual():
    mesh = build_notched_square(2)
    space = fe_space(mesh)
    params = FULL.with_(L_u=0.5)
    rng = np.random.default_rng(3)
    state = FieldState(rng.normal(scale=1e-3, size=2 * mesh.n_nodes), np.ones(mesh.n_nodes),
                       np.zeros(mesh.n_nodes), np.ones(mesh.n_nodes))
    phi = rng.uniform(0.2, 1.0, mesh.n_nodes)
    bc = dirichlet_bc("tension", mesh, 2e-3)
    u, _ = mechanics_step(state, phi, params, bc, space)
    probe = FieldState(u, phi, state.xi, state.phi_prev_step)
    r = mechanics_residual(probe, params, bc, space)
    r = r + params.L_u * (space.vector_mass @ (u - state.u))[bc.free_mask(len(u))]
    assert np.linalg.norm(r) <= 1e-12
    np.testing.assert_array_equal(u[bc.dofs], bc.values)


def test_newton_failure_reports_history():
    mesh = build_notched_square(1)
    space = fe_space(mesh)
    state = FieldState.intact(space)
    cfg = StaggeredConfig(newton_max_iters=1, newton_tol=1e-300)
    with pytest.raises(NewtonError) as err:
        mechanics_step(state, np.full(mesh.n_nodes, 0.5), SPLIT, dirichlet_bc("shear", mesh, 1e-2), space, cfg)
    assert len(err.value.residuals) == 2


def test_phasefield_intact_stationary():
    mesh = build_notched_square(2)
    space = fe_space(mesh)
    state = FieldState.intact(space)
    phi, passes = phasefield_step(state, state.u, FULL, space)
    np.testing.assert_allclose(phi, 1.0, atol=1e-12)
    assert passes == 1


def test_phasefield_huge_driving_force():
    mesh = build_unit_square(1)
    space = fe_space(mesh)
    state = FieldState.intact(space)
    u = _affine_u(mesh, np.diag([10.0, 10.0]))
    phi, _ = phasefield_step(state, u, FULL, space)
    assert np.abs(phi).max() < 1e-3


def _single_element():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    faces = np.array([[0, 0, BoundaryTag.BOTTOM], [0, 1, BoundaryTag.RIGHT],
                      [0, 2, BoundaryTag.TOP], [0, 3, BoundaryTag.LEFT]])
    return Mesh(nodes, np.array([[0, 1, 2, 3]]), faces, np.zeros((0, 2), dtype=np.int64),
                np.sqrt(2.0), np.sqrt(2.0), "single")


@pytest.mark.parametrize("xi, phi_old, phi_prev", [(0.0, 1.0, 1.0), (0.3, 0.9, 0.95), (0.0, 0.4, 0.5), (2.0, 0.6, 0.7)])
def test_phasefield_single_element_scalar_oracle(xi, phi_old, phi_prev):
    mesh = _single_element()
    space = fe_space(mesh)
    params = MaterialParams(mu_s=1.0, lambda_s=0.5, G_c=2.0, kappa=1e-3, eps=0.5, gamma=50.0, L_phi=0.7)
    e = np.diag([0.4, 0.1])
    u = _affine_u(mesh, e)
    D = float(driving_force(np.array([0.4, 0.1, 0.0]), params))
    n = mesh.n_nodes
    state = FieldState(u, np.full(n, phi_old), np.full(n, xi), np.full(n, phi_prev))
    phi, _ = phasefield_step(state, u, params, space)
    Gc_eps, L, gam = params.G_c / params.eps, params.L_phi, params.penalty
    candidates = []
    for eta in (0.0, 1.0):
        p = (L * phi_old + Gc_eps - eta * (xi - gam * phi_prev)) / (L + Gc_eps + (1 - params.kappa) * D + eta * gam)
        if (xi + gam * (p - phi_prev) >= 0) == bool(eta):
            candidates.append(p)
    assert len(candidates) == 1
    np.testing.assert_allclose(phi, candidates[0], rtol=1e-12)


def test_residual_check_cases():
    mesh = build_unit_square(2)
    space = fe_space(mesh)
    exact = _affine_u(mesh, [[1e-3, 0.0], [0.0, -2e-4]])
    bc = _boundary_bc(mesh, exact)
    intact = FieldState.intact(space)
    u, _ = mechanics_step(intact, intact.phi, FULL.with_(G_c=1.0), bc, space)
    state = FieldState(u, intact.phi, intact.xi, intact.phi_prev_step)
    mech, pf, ok = residual_check(state, FULL.with_(G_c=1.0), bc, space, tol=1e-6)
    assert mech <= 1e-10 and not ok  # phase field not yet relaxed under the new strain
    zero = dirichlet_bc("tension", build_notched_square(1), 0.0)
    m1 = build_notched_square(1)
    s0 = FieldState.intact(fe_space(m1))
    assert residual_check(s0, FULL, zero, m1)[2]
    # a load increment applied to the boundary dofs only
    s1 = s0.copy()
    bc1 = dirichlet_bc("tension", m1, 1e-3)
    s1.u[bc1.dofs] = bc1.values
    assert not residual_check(s1, FULL, bc1, m1)[2]


def test_patch_residuals_at_convergence():
    mesh = build_unit_square(2)
    space = fe_space(mesh)
    exact = _affine_u(mesh, [[1e-3, 0.0], [0.0, -2e-4]])
    bc = _boundary_bc(mesh, exact)
    state, report = run_loading_step(FieldState.intact(space), FULL, StaggeredConfig(tol=1e-10), bc, space)
    assert report.converged
    assert report.mech_residual[-1] <= 1e-10 and report.pf_residual[-1] <= 1e-10
    assert np.abs(state.u - exact).max() <= 1e-10


def test_zero_increment_one_iteration():
    mesh = build_notched_square(2)
    space = fe_space(mesh)
    state, report = run_loading_step(FieldState.intact(space), FULL, StaggeredConfig(),
                                     dirichlet_bc("tension", mesh, 0.0), space)
    assert report.converged and report.iterations == 1


def test_report_lengths_and_lfi():
    mesh = build_notched_square(2)
    space = fe_space(mesh)
    params = FULL.with_(L_u=1.0, L_phi=1.0, eps=2 * mesh.h)
    cfg = StaggeredConfig(lfi=2)
    state, report = run_loading_step(FieldState.intact(space), params, cfg, dirichlet_bc("tension", mesh, 5e-3), space)
    assert report.iterations == 2 and not report.converged
    for series in (report.mech_residual, report.pf_residual, report.du_norm, report.dphi_norm,
                   report.weighted_increment, report.eta_active, report.newton_iters, report.strain_sup):
        assert len(series) == report.iterations
    assert np.all(state.xi >= 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        StaggeredConfig(tol=0.0)
    with pytest.raises(ValueError):
        StaggeredConfig(lfi=0)
    with pytest.raises(ValueError):
        StaggeredConfig(max_iters=10, lfi=11)
    assert StaggeredConfig(lfi=30).cap == 30 and StaggeredConfig().cap == 500


def _run(mesh, params, steps, dt=1e-3, kind="tension", tol=1e-6):
    space = fe_space(mesh)
    state = FieldState.intact(space)
    out = []
    for n in range(1, steps + 1):
        bc = dirichlet_bc(kind, mesh, n * dt)
        state, report = run_loading_step(state, params, StaggeredConfig(tol=tol), bc, space)
        assert report.converged
        out.append(state.copy())
    return out


def test_fixed_point_independent_of_stabilization():
    mesh = build_notched_square(2)
    params = FULL.with_(eps=2 * mesh.h)
    a = _run(mesh, params, 4, tol=1e-10)
    b = _run(mesh, params.with_(L_u=1e-2, L_phi=1e-2), 4, tol=1e-10)
    for sa, sb in zip(a, b):
        assert np.abs(sa.u - sb.u).max() <= 1e-8
        assert np.abs(sa.phi - sb.phi).max() <= 1e-8


def test_irreversibility_small_cycle():
    mesh = build_notched_square(2)
    params = SPLIT.with_(eps=2 * mesh.h)
    space = fe_space(mesh)
    state = FieldState.intact(space)
    loads = [2e-3, 4e-3, 6e-3, 8e-3, 4e-3, 0.0, 4e-3]
    for t in loads:
        prev = state.phi.copy()
        state, report = run_loading_step(state, params, StaggeredConfig(), dirichlet_bc("shear", mesh, t), space)
        assert (state.phi - prev).max() <= 1e-3
        assert np.all(state.xi >= 0.0)
    assert degradation(state.phi, params.kappa).min() > 0.0
