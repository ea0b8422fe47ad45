"""Command-line front end: ``phasefrac run | sweep | classify``.

Configuration is a flat ``key=value`` file; ``--key value`` flags override
file entries.  Relative output directories are resolved against
``$PHASEFRAC_OUTPUT_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .bench import (
    DEFAULTS,
    BenchmarkError,
    ProblemKind,
    build_mesh,
    contraction_classifier,
    make_problem,
    run_benchmark,
)
from .mesh import write_vtk
from .staggered import StaggeredConfig

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "PHASEFRAC_OUTPUT_ROOT"
CSV_HEADER = (
    "step", "time", "u_load", "Fx", "Fy", "stagger_iters", "newton_iters", "residual",
    "strain_sup", "strain_sup_min", "strain_sup_max", "converged",
)
REQUIRED = ("problem", "refinement")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemKind
    refinement: int
    L_u: float = 0.0
    L_phi: float = 0.0
    gamma: float | None = None
    kappa_mode: tuple | None = None  # ("absolute" | "h_scaled", value)
    eps_factor: float = 2.0
    delta_t: float | None = None
    n_steps: int | None = None
    tol: float = 1e-6
    max_iters: int = 500
    lfi: int | None = None
    output_dir: Path = Path("output")
    vtk_every: int = 0
    deterministic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "problem", ProblemKind(self.problem))
        for name in ("L_u", "L_phi", "gamma", "eps_factor", "delta_t", "tol"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise ConfigError(f"{name} must be finite")
        if self.eps_factor <= 0:
            raise ConfigError("eps_factor must be positive")
        if self.refinement < 0:
            raise ConfigError("refinement must be >= 0")
        if self.vtk_every < 0:
            raise ConfigError("vtk_every must be >= 0")

    @property
    def steps(self) -> int:
        return self.n_steps or DEFAULTS[self.problem]["n_steps"]

    def with_(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def parse_kappa_mode(text: str) -> tuple:
    m = re.fullmatch(r"\s*(absolute|h_scaled)\s*\(\s*([^)]+?)\s*\)\s*", text)
    if not m:
        raise ValueError("expected absolute(<value>) or h_scaled(<value>)")
    return m.group(1), float(m.group(2))


def _optional(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none") else conv(text)
    return parse


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_CONVERTERS = {
    "problem": lambda s: ProblemKind(s.strip().lower()),
    "refinement": int,
    "L_u": float,
    "L_phi": float,
    "gamma": _optional(float),
    "kappa_mode": _optional(parse_kappa_mode),
    "eps_factor": float,
    "delta_t": _optional(float),
    "n_steps": _optional(int),
    "tol": float,
    "max_iters": int,
    "lfi": _optional(int),
    "output_dir": lambda s: Path(s.strip()),
    "vtk_every": int,
    "deterministic": _bool,
}


def _convert(key, text, where):
    if key not in _CONVERTERS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        return _CONVERTERS[key](text)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from exc


def read_config_file(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, text = (p.strip() for p in line.split("=", 1))
        values[key] = _convert(key, text, f"{path}:{lineno}")
    return values


def parse_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Build a ``RunConfig`` from a file and/or flag overrides.

    Overrides may be raw strings (converted like file values) or already
    typed values.  Unknown keys and missing ``problem`` / ``refinement``
    raise ``ConfigError``.
    """
    values = read_config_file(path) if path is not None else {}
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        values[key] = _convert(key, val, f"--{key}") if isinstance(val, str) else val
        if key not in _CONVERTERS:
            raise ConfigError(f"--{key}: unknown key {key!r}")
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    env = os.environ if env is None else env
    root = env.get(OUTPUT_ROOT_ENV)
    out = Path(values.get("output_dir", RunConfig.output_dir))
    if root and not out.is_absolute():
        values["output_dir"] = Path(root) / out
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# ----------------------------------------------------------------- writers
def format_number(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    return f"{x:.17g}"


def write_load_csv(path, samples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in samples:
            w.writerow([format_number(getattr(s, name)) for name in CSV_HEADER])


# ---------------------------------------------------------------- commands
def _problem(config: RunConfig, mesh):
    kappa_mode, kappa = config.kappa_mode or (None, None)
    return make_problem(
        config.problem, mesh, L_u=config.L_u, L_phi=config.L_phi, gamma=config.gamma,
        kappa=kappa, kappa_mode=kappa_mode, eps_factor=config.eps_factor,
        delta_t=config.delta_t, n_steps=config.n_steps,
    )


def _staggered(config: RunConfig) -> StaggeredConfig:
    return StaggeredConfig(tol=config.tol, max_iters=config.max_iters, lfi=config.lfi)


def execute(config: RunConfig):
    """Run one configuration and write its outputs; returns the samples."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh = build_mesh(config.problem, config.refinement)
    spec = _problem(config, mesh)

    def dump(sample, state):
        if config.vtk_every and sample.step % config.vtk_every == 0:
            write_vtk(
                out / f"fields_{sample.step}.vtk", mesh,
                point_vectors={"u": state.u}, point_scalars={"phi": state.phi, "xi": state.xi},
                title=f"{config.problem.value} step {sample.step}",
            )

    result = run_benchmark(spec, _staggered(config), mesh, on_step=dump)
    write_load_csv(out / "load_displacement.csv", result.samples)
    capped = sum(not s.converged for s in result.samples)
    if capped:
        log.warning("%d of %d steps reached the iteration cap", capped, len(result.samples))
    return result.samples


def cmd_run(config: RunConfig) -> int:
    try:
        execute(config)
    except (BenchmarkError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def sweep_configs(base: RunConfig, L_values, special_L_phi: float = 1e-3):
    """``(label, config)`` pairs: one per ``L`` plus the two special cases."""
    if not L_values:
        raise ConfigError("empty L list")
    pairs = [(L, L) for L in L_values] + [(0.0, special_L_phi), (0.0, 0.0)]
    out = []
    for L_u, L_phi in pairs:
        label = f"Lu_{L_u:g}_Lphi_{L_phi:g}"
        out.append((label, base.with_(L_u=L_u, L_phi=L_phi, output_dir=Path(base.output_dir) / label)))
    return out


def write_sweep_summary(path, labels, columns):
    n = max((len(c) for c in columns), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", *labels])
        for k in range(n):
            w.writerow([k + 1, *(c[k].stagger_iters if k < len(c) else "" for c in columns)])


def cmd_sweep(base: RunConfig, L_values, special_L_phi: float = 1e-3, workers: int = 1) -> int:
    runs = sweep_configs(base, L_values, special_L_phi)
    configs = [c for _, c in runs]
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(execute, configs))
        else:
            results = [execute(c) for c in configs]
    except (BenchmarkError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_sweep_summary(Path(base.output_dir) / "sweep_summary.csv", [lbl for lbl, _ in runs], results)
    return 0


def classify_lines(config: RunConfig, M: float, c_P: float):
    mesh = build_mesh(config.problem, config.refinement)
    params = _problem(config, mesh).params
    v = contraction_classifier(params, M, c_P, eps=params.eps)
    _, b, c = v.coefficients
    lines = [
        f"xi = {v.xi_const:.17g}",
        f"P(eps) = eps^2 + ({b:.17g}) eps + {c:.17g}",
        f"case: {v.case}",
    ]
    if v.roots:
        lines.append("roots: " + ", ".join(f"{r:.17g}" for r in v.roots))
    if v.case == "ComplexRoots":
        lines.append("contraction holds for all ε > 0")
    elif v.holds:
        lines.append(f"contraction condition satisfied at ε = {v.eps:.17g}")
    else:
        lines.append(f"contraction condition NOT satisfied at ε = {v.eps:.17g}")
    return lines


def cmd_classify(config: RunConfig, M: float, c_P: float) -> int:
    for line in classify_lines(config, M, c_P):
        print(line)
    return 0


# -------------------------------------------------------------------- main
def _add_config_args(p):
    p.add_argument("config", nargs="?", help="key=value configuration file")
    for name in _CONVERTERS:
        p.add_argument(f"--{name}", dest=name, default=None, metavar="VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phasefrac", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_config_args(sub.add_parser("run", help="single benchmark run"))
    sw = sub.add_parser("sweep", help="stabilization-parameter sweep")
    _add_config_args(sw)
    sw.add_argument("--L", dest="L_list", type=float, nargs="+", default=[1e-6, 1e-3, 1e-2, 1e-1])
    sw.add_argument("--special-L-phi", type=float, default=1e-3)
    sw.add_argument("--workers", type=int, default=1)
    cl = sub.add_parser("classify", help="contraction polynomial classification")
    _add_config_args(cl)
    cl.add_argument("--M", type=float, required=True, help="strain bound")
    cl.add_argument("--c-P", dest="c_P", type=float, default=1.0, help="Poincare-type constant")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    overrides = {name: getattr(args, name) for name in _CONVERTERS}
    try:
        config = parse_config(args.config, overrides)
    except (ConfigError, OSError) as exc:
        parser.exit(2, f"phasefrac: error: {exc}\n")
    if args.command == "run":
        return cmd_run(config)
    if args.command == "sweep":
        workers = 1 if config.deterministic else args.workers
        return cmd_sweep(config, args.L_list, args.special_L_phi, workers)
    return cmd_classify(config, args.M, args.c_P)


if __name__ == "__main__":
    sys.exit(main())
