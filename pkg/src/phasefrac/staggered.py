"""Stabilized staggered (L-scheme) iteration with augmented-Lagrangian irreversibility.

One loading step alternates

1. the mechanics solve with the phase field frozen at the previous iterate,
   stabilized by ``L_u (u - u_old, v)``;
2. the phase-field solve with the displacement frozen, stabilized by
   ``L_phi (phi - phi_old, psi)`` and penalized by
   ``([xi + gamma (phi - phi_prev_step)]+, psi)``;
3. the multiplier update ``xi <- [xi + gamma (phi - phi_prev_step)]+``

until both scaled residuals of the coupled system drop below ``tol``.
"""

from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import FESpace, apply_dirichlet
from .linsolve import solve_spd
from .material import (
    MaterialParams,
    Variant,
    degradation,
    degraded_stress,
    driving_force,
    elasticity_matrix,
    positive_part,
    split_tangent,
)
from .mesh import Mesh

log = logging.getLogger(__name__)

_spaces: "weakref.WeakKeyDictionary[Mesh, FESpace]" = weakref.WeakKeyDictionary()


def fe_space(mesh_or_space) -> FESpace:
    """FESpace for a mesh, cached per mesh object."""
    if isinstance(mesh_or_space, FESpace):
        return mesh_or_space
    space = _spaces.get(mesh_or_space)
    if space is None:
        space = _spaces[mesh_or_space] = FESpace(mesh_or_space)
    return space


class NewtonError(RuntimeError):
    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = list(residuals)


class ActiveSetError(RuntimeError):
    def __init__(self, message, changes):
        super().__init__(message)
        self.changes = list(changes)


@dataclass
class DirichletBC:
    """Prescribed displacement dofs and their values."""

    dofs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=np.int64)
        self.values = np.broadcast_to(np.asarray(self.values, dtype=float), self.dofs.shape).copy()

    def free_mask(self, n):
        mask = np.ones(n, dtype=bool)
        mask[self.dofs] = False
        return mask


@dataclass
class FieldState:
    u: np.ndarray
    phi: np.ndarray
    xi: np.ndarray
    phi_prev_step: np.ndarray

    @classmethod
    def intact(cls, mesh_or_space) -> "FieldState":
        space = fe_space(mesh_or_space)
        n = space.scalar.n_dofs
        return cls(np.zeros(2 * n), np.ones(n), np.zeros(n), np.ones(n))

    def copy(self) -> "FieldState":
        return FieldState(self.u.copy(), self.phi.copy(), self.xi.copy(), self.phi_prev_step.copy())


@dataclass
class StaggeredConfig:
    tol: float = 1e-6
    max_iters: int = 500
    lfi: int | None = None
    newton_tol: float = 1e-8
    newton_max_iters: int = 50
    line_search_max_halvings: int = 10
    active_set_max_passes: int = 50

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.lfi is not None and not 1 <= self.lfi <= self.max_iters:
            raise ValueError("lfi must satisfy 1 <= lfi <= max_iters")

    @property
    def cap(self) -> int:
        return self.lfi if self.lfi is not None else self.max_iters


@dataclass
class StaggeredReport:
    mech_residual: list = field(default_factory=list)
    pf_residual: list = field(default_factory=list)
    du_norm: list = field(default_factory=list)
    dphi_norm: list = field(default_factory=list)
    weighted_increment: list = field(default_factory=list)
    eta_active: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)
    strain_sup: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    @property
    def total_newton(self) -> int:
        return int(sum(self.newton_iters))

    @property
    def final_residual(self) -> float:
        if not self.iterations:
            return 0.0
        return max(self.mech_residual[-1], self.pf_residual[-1])


# ------------------------------------------------------------------ pointwise
def eta_field(xi, gamma, phi_iter, phi_prev_step):
    """Active-set indicator: 1 where ``xi + gamma (phi - phi_prev) >= 0``."""
    arg = np.asarray(xi) + gamma * (np.asarray(phi_iter) - np.asarray(phi_prev_step))
    return (arg >= 0.0).astype(float)


def xi_update(xi, gamma, phi_new, phi_prev_step):
    return positive_part(np.asarray(xi) + gamma * (np.asarray(phi_new) - np.asarray(phi_prev_step)))


def strain_sup(u, mesh_or_space) -> float:
    """Largest Frobenius norm of the strain over all quadrature points."""
    eps = fe_space(mesh_or_space).strains(u)
    fro = np.sqrt(eps[..., 0] ** 2 + eps[..., 1] ** 2 + 0.5 * eps[..., 2] ** 2)
    return float(fro.max())


# ---------------------------------------------------------------- mechanics
def _internal_force(space, u, phi, params):
    g = degradation(space.interpolate(phi), params.kappa)
    return space.assemble_internal_force(degraded_stress(space.strains(u), g, params))


def _full_stiffness(space, g, params):
    cache = space.__dict__.setdefault("_elastic_qp", {})
    key = (params.mu_s, params.lambda_s)
    if key not in cache:
        C = elasticity_matrix(params.mu_s, params.lambda_s)
        cache[key] = np.einsum("eq,eqia,ij,eqjb->eqab", space.JxW, space.B, C, space.B)
    return space._vpat.matrix(np.einsum("eq,eqab->eab", g, cache[key]))


def mechanics_step(state: FieldState, phi_fixed, params: MaterialParams, bc: DirichletBC, mesh_or_space,
                   config: StaggeredConfig | None = None, body_force=None):
    """Solve the stabilized mechanics subproblem.

    ``state.u`` is the previous iterate ``u_old``.  Returns ``(u, newton_iters)``;
    the full model is linear and takes one solve.
    """
    space = fe_space(mesh_or_space)
    config = config or StaggeredConfig()
    n = space.vector.n_dofs
    b = np.zeros(n) if body_force is None else np.asarray(body_force, dtype=float)
    u_old = state.u
    g = degradation(space.interpolate(phi_fixed), params.kappa)
    Mv = space.vector_mass

    if params.variant is Variant.FULL:
        A = _full_stiffness(space, g, params)
        rhs = b.copy()
        if params.L_u > 0:
            A = A + params.L_u * Mv
            rhs += params.L_u * (Mv @ u_old)
        A, rhs = apply_dirichlet(A, rhs, (bc.dofs, bc.values))
        return solve_spd(A, rhs, subproblem="mechanics"), 1

    free = bc.free_mask(n)
    u = u_old.copy()
    u[bc.dofs] = bc.values

    def residual(v):
        r = _internal_force(space, v, phi_fixed, params) - b
        if params.L_u > 0:
            r += params.L_u * (Mv @ (v - u_old))
        r[~free] = 0.0
        return r

    r = residual(u)
    rn = np.linalg.norm(r)
    history = [rn]
    tol = config.newton_tol * max(1.0, rn)
    for it in range(1, config.newton_max_iters + 1):
        if rn <= tol:
            return u, it - 1
        eps = space.strains(u)
        Dp, Dm = split_tangent(eps, params)
        K = space.assemble_elasticity(g[..., None, None] * Dp + Dm)
        if params.L_u > 0:
            K = K + params.L_u * Mv
        K, rhs = apply_dirichlet(K, -r, (bc.dofs, 0.0))
        du = solve_spd(K, rhs, subproblem="mechanics")
        # residual-based monotonicity: halve until the residual decreases
        alpha, best = 1.0, None
        for _ in range(config.line_search_max_halvings + 1):
            trial = u + alpha * du
            rt = residual(trial)
            rtn = np.linalg.norm(rt)
            if best is None or rtn < best[2]:
                best = (trial, rt, rtn)
            if rtn < rn:
                break
            alpha *= 0.5
        u, r, rn = best
        history.append(rn)
    if rn <= tol:
        return u, config.newton_max_iters
    raise NewtonError(f"Newton did not converge in {config.newton_max_iters} iterations", history)


# --------------------------------------------------------------- phase field
def _weighted_mass(space, coeff):
    cache = space.__dict__.setdefault("_mass_qp", None)
    if cache is None:
        cache = space._mass_qp = np.einsum("eq,qa,qb->eqab", space.JxW, space.N, space.N)
    return space._spat.matrix(np.einsum("eq,eqab->eab", coeff, cache))


def _pf_operator(space, u, params):
    """Phase-field matrix without stabilization and penalty terms."""
    D = driving_force(space.strains(u), params)
    Gc, eps, kappa = params.G_c, params.eps, params.kappa
    return Gc * eps * space.stiffness + (Gc / eps) * space.mass + _weighted_mass(space, (1.0 - kappa) * D)


def phasefield_step(state: FieldState, u_fixed, params: MaterialParams, mesh_or_space,
                    config: StaggeredConfig | None = None):
    """Solve the stabilized, penalized phase-field subproblem.

    ``state.phi`` is the previous iterate.  The penalty bracket is handled by
    freezing the active set, solving the SPD system and refreshing the set
    until it no longer changes.  Returns ``(phi, passes)``.
    """
    space = fe_space(mesh_or_space)
    config = config or StaggeredConfig()
    gamma = params.penalty
    m = space.lumped_mass
    A0 = _pf_operator(space, u_fixed, params)
    rhs0 = (params.G_c / params.eps) * m
    if params.L_phi > 0:
        A0 = A0 + params.L_phi * space.mass
        rhs0 = rhs0 + params.L_phi * (space.mass @ state.phi)
    xi, phi_prev = state.xi, state.phi_prev_step
    eta = eta_field(xi, gamma, state.phi, phi_prev)
    seen = {eta.tobytes()}
    changes = []
    for passes in range(1, config.active_set_max_passes + 1):
        A = A0 + sp.diags(gamma * m * eta)
        rhs = rhs0 - m * eta * (xi - gamma * phi_prev)
        phi = solve_spd(A, rhs, subproblem="phase-field")
        new_eta = eta_field(xi, gamma, phi, phi_prev)
        # sign flips of a bracket argument at rounding level are not real switches
        arg = xi + gamma * (phi - phi_prev)
        noise = 1e-10 * (np.abs(xi) + gamma * (np.abs(phi) + np.abs(phi_prev)))
        new_eta = np.where(np.abs(arg) <= noise, eta, new_eta)
        n_changed = int(np.count_nonzero(new_eta != eta))
        changes.append(n_changed)
        if n_changed == 0:
            return phi, passes
        key = new_eta.tobytes()
        if key in seen:
            raise ActiveSetError("active set cycles", changes)
        seen.add(key)
        eta = new_eta
    raise ActiveSetError(f"active set not settled in {config.active_set_max_passes} passes", changes)


# ----------------------------------------------------------------- residuals
def mechanics_residual(state: FieldState, params, bc, mesh_or_space, body_force=None):
    space = fe_space(mesh_or_space)
    r = _internal_force(space, state.u, state.phi, params)
    if body_force is not None:
        r = r - body_force
    return r[bc.free_mask(len(r))]


def phasefield_residual(state: FieldState, params, mesh_or_space):
    space = fe_space(mesh_or_space)
    A0 = _pf_operator(space, state.u, params)
    m = space.lumped_mass
    bracket = positive_part(state.xi + params.penalty * (state.phi - state.phi_prev_step))
    return A0 @ state.phi - (params.G_c / params.eps) * m + m * bracket


def basis_norms(mesh_or_space):
    """L2 norms of the scalar nodal basis functions."""
    space = fe_space(mesh_or_space)
    norms = space.__dict__.get("_basis_norms")
    if norms is None:
        norms = space._basis_norms = np.sqrt(space.mass.diagonal())
    return norms


def residual_check(state: FieldState, params, bc, mesh_or_space, tol: float = 1e-6, body_force=None):
    """Residuals of the coupled system at the current iterates.

    The stabilization terms are evaluated with both arguments equal to the
    current iterate and therefore vanish.  Each residual entry is divided by
    the L2 norm of its test function, so the measure does not shrink with
    the cell area.  Returns ``(mech, pf, passed)``.
    """
    space = fe_space(mesh_or_space)
    w = basis_norms(space)
    wv = np.repeat(w, 2)[bc.free_mask(2 * len(w))]
    mech = float(np.linalg.norm(mechanics_residual(state, params, bc, space, body_force) / wv))
    pf = float(np.linalg.norm(phasefield_residual(state, params, space) / w))
    return mech, pf, max(mech, pf) <= tol


# -------------------------------------------------------------------- driver
def run_loading_step(state: FieldState, params: MaterialParams, config: StaggeredConfig, bc: DirichletBC,
                     mesh_or_space, body_force=None, on_iteration=None):
    """Iterate one loading step from the converged fields of the previous one.

    Returns the new state and a ``StaggeredReport``.  Reaching the iteration
    cap (``lfi`` or ``max_iters``) is reported through ``converged=False``.
    """
    space = fe_space(mesh_or_space)
    gamma = params.penalty
    phi_prev = state.phi.copy()
    it_state = FieldState(state.u.copy(), state.phi.copy(), state.xi.copy(), phi_prev)
    report = StaggeredReport()
    Mv, Ms = space.vector_mass, space.mass

    for i in range(1, config.cap + 1):
        u_old, phi_old = it_state.u, it_state.phi
        u, newton = mechanics_step(it_state, phi_old, params, bc, space, config, body_force)
        it_state.u = u
        phi, _ = phasefield_step(it_state, u, params, space, config)
        it_state.phi = phi

        mech, pf, passed = residual_check(it_state, params, bc, space, config.tol, body_force)
        eta = eta_field(it_state.xi, gamma, phi, phi_prev)
        it_state.xi = xi_update(it_state.xi, gamma, phi, phi_prev)

        du, dphi = u - u_old, phi - phi_old
        du2, dphi2 = float(du @ (Mv @ du)), float(dphi @ (Ms @ dphi))
        report.mech_residual.append(mech)
        report.pf_residual.append(pf)
        report.du_norm.append(np.sqrt(max(du2, 0.0)))
        report.dphi_norm.append(np.sqrt(max(dphi2, 0.0)))
        report.weighted_increment.append(np.sqrt(max(0.5 * params.L_phi * dphi2 + 0.5 * params.L_u * du2, 0.0)))
        report.eta_active.append(float(eta.mean()))
        report.newton_iters.append(newton)
        report.strain_sup.append(strain_sup(u, space))
        report.iterations = i
        if on_iteration is not None:
            on_iteration(i, it_state, report)
        if passed:
            report.converged = True
            break

    if not report.converged:
        log.info("loading step hit the iteration cap (%d) with residual %.3e", config.cap, report.final_residual)
    return it_state, report
