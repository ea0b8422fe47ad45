"""Benchmark problems, load-displacement records and convergence diagnostics."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .fem import _constraint_arrays
from .material import MaterialParams, Variant, degradation, degraded_stress, tensor_bounds
from .mesh import BoundaryTag, Mesh, build_lshape, build_notched_square
from .staggered import (
    DirichletBC,
    FieldState,
    StaggeredConfig,
    fe_space,
    run_loading_step,
    strain_sup,
)

log = logging.getLogger(__name__)


class ProblemKind(str, enum.Enum):
    TENSION = "tension"
    SHEAR = "shear"
    LSHAPE = "lshape"


# Moduli in kN/mm^2, G_c in kN/mm.
NOTCHED_MATERIAL = dict(mu_s=80.77, lambda_s=121.15, G_c=2.7e-3)
LSHAPE_MATERIAL = dict(mu_s=10.95, lambda_s=6.16, G_c=8.9e-5)

DEFAULTS = {
    ProblemKind.TENSION: dict(delta_t=1e-4, n_steps=80, variant=Variant.FULL, kappa=("absolute", 1e-10)),
    ProblemKind.SHEAR: dict(delta_t=1e-4, n_steps=160, variant=Variant.SPLIT, kappa=("absolute", 1e-10)),
    ProblemKind.LSHAPE: dict(delta_t=1e-3, n_steps=2000, variant=Variant.SPLIT, kappa=("h_scaled", 1e-10)),
}


class BenchmarkError(RuntimeError):
    def __init__(self, step, cause):
        super().__init__(f"loading step {step} failed: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class ProblemSpec:
    kind: ProblemKind
    params: MaterialParams
    delta_t: float
    n_steps: int
    u_bar: float = 1.0

    @property
    def variant(self) -> Variant:
        return self.params.variant

    @property
    def load_tag(self) -> BoundaryTag:
        return BoundaryTag.LSHAPE_LOAD if self.kind is ProblemKind.LSHAPE else BoundaryTag.TOP


@dataclass
class LoadSample:
    step: int
    time: float
    u_load: float
    Fx: float
    Fy: float
    stagger_iters: int
    newton_iters: int
    residual: float
    strain_sup: float
    strain_sup_min: float
    strain_sup_max: float
    converged: bool


@dataclass
class BenchmarkResult:
    samples: list
    state: FieldState
    snapshots: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)

    def column(self, name):
        return np.array([getattr(s, name) for s in self.samples])


@dataclass(frozen=True)
class ContractionVerdict:
    xi_const: float
    coefficients: tuple  # (1, -b, c_P) of eps^2 - b eps + c_P
    case: str  # "TwoRealRoots" | "DoubleRoot" | "ComplexRoots"
    roots: tuple
    eps: float | None
    holds: bool | None


def build_mesh(kind, n_refine: int) -> Mesh:
    kind = ProblemKind(kind)
    return build_lshape(n_refine) if kind is ProblemKind.LSHAPE else build_notched_square(n_refine)


def make_problem(kind, mesh: Mesh, *, L_u=0.0, L_phi=0.0, gamma=None, kappa=None, kappa_mode=None,
                 eps_factor=2.0, delta_t=None, n_steps=None, u_bar=1.0) -> ProblemSpec:
    """Problem with the benchmark's material data and ``eps = eps_factor * h``.

    ``h`` is the smallest cell diameter (equal to the largest one on the
    uniform notched meshes).  ``kappa_mode`` is ``"absolute"`` or
    ``"h_scaled"`` (``kappa = value * h``).
    """
    kind = ProblemKind(kind)
    d = DEFAULTS[kind]
    h = mesh.h_min
    mode, value = d["kappa"]
    if kappa_mode is not None:
        mode = kappa_mode
    if kappa is not None:
        value = kappa
    kappa_val = value * h if mode == "h_scaled" else value
    mat = LSHAPE_MATERIAL if kind is ProblemKind.LSHAPE else NOTCHED_MATERIAL
    params = MaterialParams(
        **mat, kappa=kappa_val, eps=eps_factor * h, gamma=gamma, L_u=L_u, L_phi=L_phi, variant=d["variant"]
    )
    return ProblemSpec(kind, params, delta_t or d["delta_t"], n_steps or d["n_steps"], u_bar)


# ----------------------------------------------------------------- loading
def lshape_displacement(t: float, u_bar: float = 1.0) -> float:
    """Push-pull-push history on the loaded section."""
    if t < 0.3:
        return t * u_bar
    if t < 0.8:
        return (0.6 - t) * u_bar
    return (-1.0 + t) * u_bar


def load_schedule(kind, t: float, u_bar: float = 1.0):
    """Prescribed displacements at time ``t`` as ``[(tag, component, value)]``.

    ``component`` is 0 for ``u_x`` and 1 for ``u_y``.
    """
    kind = ProblemKind(kind)
    T = BoundaryTag
    if kind is ProblemKind.TENSION:
        return [(T.BOTTOM, 1, 0.0), (T.TOP, 0, 0.0), (T.TOP, 1, t * u_bar)]
    if kind is ProblemKind.SHEAR:
        return [
            (T.BOTTOM, 0, 0.0), (T.BOTTOM, 1, 0.0),
            (T.LEFT, 1, 0.0), (T.RIGHT, 1, 0.0),
            (T.SLIT_LOWER, 1, 0.0),
            (T.TOP, 1, 0.0), (T.TOP, 0, t * u_bar),
        ]
    return [(T.LSHAPE_FIXED, 0, 0.0), (T.LSHAPE_FIXED, 1, 0.0), (T.LSHAPE_LOAD, 1, lshape_displacement(t, u_bar))]


def prescribed_load(kind, t: float, u_bar: float = 1.0) -> float:
    kind = ProblemKind(kind)
    if kind is ProblemKind.LSHAPE:
        return lshape_displacement(t, u_bar)
    return t * u_bar


def dirichlet_bc(kind, mesh: Mesh, t: float, u_bar: float = 1.0) -> DirichletBC:
    dofs, values = [], []
    for tag, comp, val in load_schedule(kind, t, u_bar):
        nodes = mesh.nodes_with_tag(tag)
        dofs.append(2 * nodes + comp)
        values.append(np.full(len(nodes), val))
    d, v = _constraint_arrays((np.concatenate(dofs), np.concatenate(values)))
    return DirichletBC(d, v)


# -------------------------------------------------------------- diagnostics
def surface_load(state: FieldState, mesh, tag: BoundaryTag, params: MaterialParams):
    """``(F_x, F_y)``: integral of the constitutive traction over faces with ``tag``."""
    space = fe_space(mesh)
    elements, ref, w, normal = space.face_quadrature(tag)
    eps = space.face_strains(state.u, elements, ref)
    g = degradation(space.face_values(state.phi, elements, ref), params.kappa)
    s = degraded_stress(eps, g, params)  # (nf, 2, 3)
    nx, ny = normal[:, None, 0], normal[:, None, 1]
    tx = s[..., 0] * nx + s[..., 2] * ny
    ty = s[..., 2] * nx + s[..., 1] * ny
    return float(np.sum(w * tx)), float(np.sum(w * ty))


def contraction_classifier(params: MaterialParams, M: float, c_P: float, eps: float | None = None) -> ContractionVerdict:
    """Classify ``P(eps) = eps^2 - 16 xi (c_P/G_c) (1-kappa)^2/kappa eps + c_P``.

    ``xi = (M lambda_max / lambda_min)^2``.  The discriminant sign and
    ``P(eps)`` are evaluated in exact rational arithmetic on the float inputs.
    """
    if M < 0 or c_P <= 0:
        raise ValueError("need M >= 0 and c_P > 0")
    tb = tensor_bounds(params)
    F = Fraction
    xi = (F(M) * F(tb.lambda_max) / F(tb.lambda_min)) ** 2
    kappa, Gc, cP = F(params.kappa), F(params.G_c), F(c_P)
    k4 = (1 - kappa) ** 4 / kappa**2
    lhs, rhs = 64 * xi**2 * k4, Gc**2 / cP
    b = 16 * xi * (cP / Gc) * (1 - kappa) ** 2 / kappa
    if lhs > rhs:
        case = "TwoRealRoots"
        bf, disc = float(b), float(b * b - 4 * cP)
        sq = math.sqrt(disc)
        # stable pair: the larger root directly, the smaller from the product c_P
        r2 = 0.5 * (bf + sq)
        roots = (float(cP) / r2, r2)
    elif lhs == rhs:
        case = "DoubleRoot"
        roots = (float(b / 2),)
    else:
        case = "ComplexRoots"
        roots = ()
    holds = None
    if eps is not None:
        e = F(eps)
        holds = bool(e * e - b * e + cP > 0)
    return ContractionVerdict(float(xi), (1.0, 0.0 - float(b), float(c_P)), case, roots, eps, holds)


# -------------------------------------------------------------------- driver
def run_benchmark(spec: ProblemSpec, config: StaggeredConfig, mesh: Mesh, *, snapshot_every: int = 0,
                  snapshot_steps=(), keep_reports: bool = False, on_step=None,
                  state: FieldState | None = None) -> BenchmarkResult:
    """Run loading steps ``1..n_steps`` and record one ``LoadSample`` per step."""
    space = fe_space(mesh)
    state = state or FieldState.intact(space)
    result = BenchmarkResult([], state)
    snapshot_steps = set(snapshot_steps)
    for n in range(1, spec.n_steps + 1):
        t = n * spec.delta_t
        bc = dirichlet_bc(spec.kind, mesh, t, spec.u_bar)
        try:
            state, report = run_loading_step(state, spec.params, config, bc, space)
        except Exception as exc:
            raise BenchmarkError(n, exc) from exc
        Fx, Fy = surface_load(state, mesh, spec.load_tag, spec.params)
        sup = report.strain_sup
        sample = LoadSample(
            step=n,
            time=t,
            u_load=prescribed_load(spec.kind, t, spec.u_bar),
            Fx=Fx,
            Fy=Fy,
            stagger_iters=report.iterations,
            newton_iters=report.total_newton,
            residual=report.final_residual,
            strain_sup=sup[-1],
            strain_sup_min=min(sup),
            strain_sup_max=max(sup),
            converged=report.converged,
        )
        result.samples.append(sample)
        if keep_reports:
            result.reports.append(report)
        if (snapshot_every and n % snapshot_every == 0) or n in snapshot_steps:
            result.snapshots[n] = state.copy()
        log.debug("step %d t=%.4g F=(%.4g, %.4g) iters=%d", n, t, Fx, Fy, report.iterations)
        if on_step is not None:
            on_step(sample, state)
    result.state = state
    return result


__all__ = [
    "ProblemKind", "ProblemSpec", "LoadSample", "BenchmarkResult", "ContractionVerdict", "BenchmarkError",
    "build_mesh", "make_problem", "load_schedule", "lshape_displacement", "prescribed_load", "dirichlet_bc",
    "surface_load", "strain_sup", "contraction_classifier", "run_benchmark",
]
