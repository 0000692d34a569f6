"""Batch command-line front end, TOML configuration, and output writers.

Usage::

    millopt run <config.toml> [--out DIR] [--snapshot-every N]
                [--deterministic] [--check-gradient] [--reference]

Exit codes: 0 success, 2 configuration error, 3 solver failure. The
``MILLOPT_THREADS`` environment variable caps the kernel worker count and
``MILLOPT_NUMBA=0`` selects the pure-numpy kernel backend.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import _kernels
from .aggregate import AggregateConfig
from .density_filter import CONVOLUTION, PDE_HELMHOLTZ, FilterSpec
from .driver import ContinuationSchedule, GridSpec, Pipeline, RunConfig, \
    backward_chain, forward_chain, machinability_check, optimize
from .fem import LoadCase, MaterialConfig, NodeSelector, volume_and_sensitivity
from .grid import StructuredGrid
from .mma import MmaConfig, initial_spacing_for_beta
from .oracle import fd_gradient
from .shadow import ShadowConfig, ToolDirection, peclet_rule_of_thumb
from .solvers import SolverConvergenceError


class ConfigError(ValueError):
    """Invalid or malformed run configuration."""


_SECTIONS = {"grid", "filter", "shadow", "project", "material", "loads", "mma", "run"}
_KEYS = {
    "grid": {"dims", "h", "origin", "passive"},
    "filter": {"kind", "r_min"},
    "shadow": {"peclet", "angles_deg", "directions", "source_factor"},
    "project": {"beta", "eta", "p_mean"},
    "material": {"e_max", "e_min", "nu", "simp_p", "e_min_initial",
                 "continuation_iters", "continuation_factor"},
    "loads": {"supports", "forces"},
    "mma": {"move_limit", "asyincr", "asydecr", "asyinit", "asy_min_gap"},
    "run": {"v_star", "rho_init", "max_iters", "change_tol"},
}


def _check_keys(section: str, table: dict) -> None:
    unknown = set(table) - _KEYS[section]
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def _require(table: dict, section: str, key: str):
    if key not in table:
        raise ConfigError(f"missing required key '{key}' in [{section}]")
    return table[key]


def _selector(entry: dict, context: str) -> NodeSelector:
    if not isinstance(entry, dict) or not entry:
        raise ConfigError(f"{context} must be a table of axis = coordinate pairs")
    bad = set(entry) - {"x", "y", "z"}
    if bad:
        raise ConfigError(f"{context}: unknown axes {sorted(bad)}")
    return NodeSelector.at(**{k: float(v) for k, v in entry.items()})


def parse_config(path: str) -> RunConfig:
    """Parse and fully validate a TOML run configuration.

    Unknown keys are hard errors; omitted optional values are filled with
    their defaults so the resolved-config echo is complete.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}")
    return build_config(raw)


def build_config(raw: dict) -> RunConfig:
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    for required in ("grid", "loads", "run"):
        if required not in raw:
            raise ConfigError(f"missing required section [{required}]")

    gtab = raw["grid"]
    _check_keys("grid", gtab)
    dims = tuple(int(v) for v in _require(gtab, "grid", "dims"))
    h = float(_require(gtab, "grid", "h"))
    origin = tuple(float(v) for v in gtab.get("origin", (0.0,) * len(dims)))
    passive = []
    for box in gtab.get("passive", []):
        extra = set(box) - {"lo", "hi"}
        if extra:
            raise ConfigError(f"unknown key(s) in passive box: {sorted(extra)}")
        passive.append((tuple(float(v) for v in _require(box, "grid.passive", "lo")),
                        tuple(float(v) for v in _require(box, "grid.passive", "hi"))))
    grid_spec = GridSpec(dims=dims, h=h, origin=origin, passive_regions=tuple(passive))
    dim = len(dims)

    ftab = raw.get("filter", {})
    _check_keys("filter", ftab)
    default_kind = CONVOLUTION if dim == 2 else PDE_HELMHOLTZ
    kind = ftab.get("kind", default_kind)
    if kind not in (CONVOLUTION, PDE_HELMHOLTZ):
        raise ConfigError(f"filter kind must be 'convolution' or 'pde', got {kind!r}")
    try:
        filter_spec = FilterSpec(kind=kind, r_min=float(ftab.get("r_min", 0.03)))
    except ValueError as exc:
        raise ConfigError(str(exc))

    stab = raw.get("shadow", {})
    _check_keys("shadow", stab)
    directions = []
    if "angles_deg" in stab:
        if dim != 2:
            raise ConfigError("angles_deg is only valid for 2D grids")
        directions = [ToolDirection.from_angle_deg(float(a)) for a in stab["angles_deg"]]
    if "directions" in stab:
        if "angles_deg" in stab:
            raise ConfigError("give either angles_deg or directions, not both")
        for vec in stab["directions"]:
            v = np.asarray(vec, dtype=float)
            if v.size != dim:
                raise ConfigError(f"tool direction {vec} has wrong dimension")
            norm = float(np.linalg.norm(v))
            if norm == 0.0 or not np.all(np.isfinite(v)):
                raise ConfigError(f"malformed tool direction {vec}")
            if abs(norm - 1.0) > 1e-9:
                warnings.warn(f"tool direction {vec} normalized (|u| = {norm:.6g})",
                              stacklevel=2)
            directions.append(ToolDirection(v))
    if "peclet" in stab:
        peclet = float(stab["peclet"])
    else:
        l_c = max(n * h for n in dims)
        peclet = peclet_rule_of_thumb(l_c)
        warnings.warn(f"Peclet number not set; using rule-of-thumb 1e4/l_c = "
                      f"{peclet:.6g} with l_c = {l_c:.6g}", stacklevel=2)
    try:
        shadow = ShadowConfig(peclet=peclet, directions=tuple(directions),
                              source_factor=float(stab.get("source_factor", 1.0)))
    except ValueError as exc:
        raise ConfigError(str(exc))

    ptab = raw.get("project", {})
    _check_keys("project", ptab)
    try:
        project = AggregateConfig(p_mean=float(ptab.get("p_mean", -4.0)),
                                  beta=float(ptab.get("beta", 8.0)),
                                  eta=float(ptab.get("eta", 0.5)))
    except ValueError as exc:
        raise ConfigError(str(exc))

    mtab = raw.get("material", {})
    _check_keys("material", mtab)
    try:
        material = MaterialConfig(e_max=float(mtab.get("e_max", 1.0)),
                                  e_min=float(mtab.get("e_min", 1e-9)),
                                  nu=float(mtab.get("nu", 0.3)),
                                  simp_p=float(mtab.get("simp_p", 3.0)))
    except ValueError as exc:
        raise ConfigError(str(exc))
    continuation = ContinuationSchedule(
        e_min_initial=(float(mtab["e_min_initial"]) if "e_min_initial" in mtab else None),
        steps=tuple(int(v) for v in mtab.get("continuation_iters", ())),
        factor=float(mtab.get("continuation_factor", 10.0)))

    ltab = raw["loads"]
    _check_keys("loads", ltab)
    supports = tuple(_selector(s, "[loads].supports entry")
                     for s in _require(ltab, "loads", "supports"))
    forces = []
    for entry in _require(ltab, "loads", "forces"):
        extra = set(entry) - {"at", "f"}
        if extra:
            raise ConfigError(f"unknown key(s) in force entry: {sorted(extra)}")
        sel = _selector(_require(entry, "loads.forces", "at"), "force location")
        fvec = tuple(float(v) for v in _require(entry, "loads.forces", "f"))
        if len(fvec) != dim:
            raise ConfigError(f"force vector {fvec} has wrong dimension")
        forces.append((sel, fvec))
    try:
        loadcase = LoadCase(supports=supports, loads=tuple(forces))
    except ValueError as exc:
        raise ConfigError(str(exc))

    mmatab = raw.get("mma", {})
    _check_keys("mma", mmatab)
    try:
        mma = MmaConfig(
            asyinit=float(mmatab.get("asyinit", initial_spacing_for_beta(project.beta))),
            asyincr=float(mmatab.get("asyincr", 1.05)),
            asydecr=float(mmatab.get("asydecr", 0.65)),
            move_limit=float(mmatab.get("move_limit", 0.1)),
            asy_min_gap=float(mmatab.get("asy_min_gap", 0.01)))
    except ValueError as exc:
        raise ConfigError(str(exc))

    rtab = raw["run"]
    _check_keys("run", rtab)
    try:
        return RunConfig(
            grid=grid_spec, filter=filter_spec, shadow=shadow, project=project,
            material=material, loadcase=loadcase,
            v_star=float(_require(rtab, "run", "v_star")),
            rho_init=float(_require(rtab, "run", "rho_init")),
            max_iters=int(rtab.get("max_iters", 400)),
            change_tol=float(rtab.get("change_tol", 1e-3)),
            continuation=continuation, mma=mma)
    except ValueError as exc:
        raise ConfigError(str(exc))


# ---------------------------------------------------------------------------
# Resolved-config echo (round-trips through parse_config)
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise TypeError(f"cannot format {value!r}")


def _selector_toml(sel: NodeSelector) -> str:
    names = "xyz"
    return "{" + ", ".join(f"{names[a]} = {_fmt(v)}" for a, v in sel.axes) + "}"


def resolved_config_toml(config: RunConfig) -> str:
    """Serialize a RunConfig with every default made explicit."""
    g = config.grid
    lines = ["[grid]",
             f"dims = {_fmt(g.dims)}",
             f"h = {_fmt(g.h)}",
             f"origin = {_fmt(g.origin if g.origin else (0.0,) * len(g.dims))}"]
    for lo, hi in g.passive_regions:
        lines += ["", "[[grid.passive]]", f"lo = {_fmt(lo)}", f"hi = {_fmt(hi)}"]
    lines += ["", "[filter]",
              f'kind = "{config.filter.kind}"',
              f"r_min = {_fmt(config.filter.r_min)}"]
    lines += ["", "[shadow]", f"peclet = {_fmt(config.shadow.peclet)}",
              f"source_factor = {_fmt(config.shadow.source_factor)}",
              "directions = [" + ", ".join(_fmt(d.u) for d in config.shadow.directions) + "]"]
    lines += ["", "[project]", f"p_mean = {_fmt(config.project.p_mean)}",
              f"beta = {_fmt(config.project.beta)}",
              f"eta = {_fmt(config.project.eta)}"]
    lines += ["", "[material]", f"e_max = {_fmt(config.material.e_max)}",
              f"e_min = {_fmt(config.material.e_min)}",
              f"nu = {_fmt(config.material.nu)}",
              f"simp_p = {_fmt(config.material.simp_p)}"]
    cont = config.continuation
    if cont.e_min_initial is not None:
        lines += [f"e_min_initial = {_fmt(cont.e_min_initial)}",
                  f"continuation_iters = {_fmt(cont.steps)}",
                  f"continuation_factor = {_fmt(cont.factor)}"]
    lines += ["", "[loads]",
              "supports = [" + ", ".join(_selector_toml(s) for s in config.loadcase.supports) + "]",
              "forces = [" + ", ".join(
                  "{at = " + _selector_toml(sel) + ", f = " + _fmt(f) + "}"
                  for sel, f in config.loadcase.loads) + "]"]
    lines += ["", "[mma]", f"move_limit = {_fmt(config.mma.move_limit)}",
              f"asyincr = {_fmt(config.mma.asyincr)}",
              f"asydecr = {_fmt(config.mma.asydecr)}",
              f"asyinit = {_fmt(config.mma.asyinit)}",
              f"asy_min_gap = {_fmt(config.mma.asy_min_gap)}"]
    lines += ["", "[run]", f"v_star = {_fmt(config.v_star)}",
              f"rho_init = {_fmt(config.rho_init)}",
              f"max_iters = {_fmt(config.max_iters)}",
              f"change_tol = {_fmt(config.change_tol)}"]
    return "\n".join(lines) + "\n"


def build_config_from_toml_text(text: str) -> RunConfig:
    return build_config(tomllib.loads(text))


# ---------------------------------------------------------------------------
# Output writers
# ---------------------------------------------------------------------------

def write_field_vtk(field: np.ndarray, grid: StructuredGrid, path: str,
                    name: str = "field") -> None:
    """Write an element field as legacy-VTK ASCII STRUCTURED_POINTS.

    One SCALARS cell array, 9 significant digits, byte-stable across runs.
    """
    field = np.asarray(field, dtype=float).ravel()
    if field.size != grid.n_elements:
        raise ValueError(f"field length {field.size} != element count {grid.n_elements}")
    nd = list(grid.dims) + [0] * (3 - grid.dim)
    origin = list(grid.origin) + [0.0] * (3 - grid.dim)
    with open(path, "w", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"millopt field {name}\n")
        fh.write("ASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nd[0] + 1} {nd[1] + 1} {nd[2] + 1}\n")
        fh.write(f"ORIGIN {origin[0]:.9g} {origin[1]:.9g} {origin[2]:.9g}\n")
        fh.write(f"SPACING {grid.h:.9g} {grid.h:.9g} {grid.h:.9g}\n")
        fh.write(f"CELL_DATA {grid.n_elements}\n")
        fh.write(f"SCALARS {name} double 1\n")
        fh.write("LOOKUP_TABLE default\n")
        for v in field:
            fh.write(f"{v:.9g}\n")


def write_field_csv(field: np.ndarray, grid: StructuredGrid, path: str) -> None:
    """Row-major CSV sidecar mirroring the VTK cell values."""
    arr = grid.to_array(np.asarray(field, dtype=float))
    arr2 = arr.reshape(-1, arr.shape[-1])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in arr2:
            writer.writerow([f"{v:.9g}" for v in row])


LOG_HEADER = ["iter", "compliance", "scaled_obj", "volfrac", "g", "change",
              "fea_iters", "shadow_iters", "adjoint_iters", "wall_ms"]


def write_iteration_log(records, path: str) -> None:
    if not records:
        raise ValueError("no iteration records to write")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_HEADER)
        for r in records:
            writer.writerow([
                r.iteration, f"{r.compliance:.9g}", f"{r.scaled_objective:.9g}",
                f"{r.volume_fraction:.9g}", f"{r.constraint:.9g}",
                f"{r.change:.9g}", r.fea_iterations, r.shadow_solves,
                r.adjoint_solves, f"{r.wall_ms:.3f}"])


_STAGE_NAMES = ("rho", "rho_tilde", "aggregated", "projected")


def _write_stack(stack, grid, out_dir, prefix="", csv_sidecar=False):
    fields = {
        "rho": grid.expand_design(stack.rho_design, passive_value=1.0),
        "rho_tilde": stack.rho_tilde,
        "aggregated": stack.aggregated,
        "projected": stack.projected,
    }
    for k, shadow_field in enumerate(stack.shadows):
        fields[f"shadow_s{k}"] = shadow_field
    for name, values in fields.items():
        path = os.path.join(out_dir, f"{prefix}{name}.vtk")
        write_field_vtk(values, grid, path, name=name)
        if csv_sidecar:
            write_field_csv(values, grid, path[:-4] + ".csv")


# ---------------------------------------------------------------------------
# Command-line entry point
# ---------------------------------------------------------------------------

def _gradient_check(pipeline, config, rng) -> float:
    """Spot-check the volume-constraint gradient against central differences."""
    grid = pipeline.grid
    x = np.full(grid.n_design, max(min(config.rho_init, 0.9), 0.1))
    x += rng.uniform(-0.05, 0.05, x.size)

    def vol(xk):
        stack = forward_chain(pipeline, xk)
        return stack.projected[grid.design_mask].mean() / config.v_star - 1.0

    stack = forward_chain(pipeline, x)
    _, dg = volume_and_sensitivity(stack.projected, grid, config.v_star)
    grad = backward_chain(pipeline, stack, dg)
    idx = rng.choice(grid.n_design, size=min(5, grid.n_design), replace=False)
    fd = fd_gradient(vol, x, 1e-6, idx)
    denom = np.maximum(np.abs(fd), 1e-12)
    return float(np.max(np.abs(grad[idx] - fd) / denom))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="millopt",
                                     description="Milling-constrained topology optimization")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an optimization from a TOML config")
    run.add_argument("config")
    run.add_argument("--out", default="millopt_out")
    run.add_argument("--snapshot-every", type=int, default=0, metavar="N")
    run.add_argument("--deterministic", action="store_true")
    run.add_argument("--check-gradient", action="store_true")
    run.add_argument("--reference", action="store_true",
                     help="bypass the shadowing stage (no milling constraint)")
    run.add_argument("--csv-fields", action="store_true",
                     help="write CSV sidecars next to the VTK fields")
    args = parser.parse_args(argv)

    threads = os.environ.get("MILLOPT_THREADS")
    if threads:
        try:
            _kernels.set_num_threads(int(threads))
        except ValueError:
            print(f"ignoring invalid MILLOPT_THREADS={threads!r}", file=sys.stderr)

    try:
        config = parse_config(args.config)
        if args.reference:
            config.shadow = ShadowConfig(peclet=config.shadow.peclet,
                                         directions=(),
                                         source_factor=config.shadow.source_factor)
        if args.deterministic:
            config.deterministic = True
            _kernels.set_num_threads(1)
        pipeline = Pipeline(config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "resolved_config.toml"), "w") as fh:
        fh.write(resolved_config_toml(config))

    if args.check_gradient:
        rng = np.random.default_rng(0)
        err = _gradient_check(pipeline, config, rng)
        print(f"gradient check: max relative error {err:.3e} on 5 random components")

    snapshot_dir = os.path.join(args.out, "snapshots")
    if args.snapshot_every > 0:
        os.makedirs(snapshot_dir, exist_ok=True)

    def callback(it, x, stack, record):
        print(f"it {it:4d}  C {record.compliance:12.5g}  vol {record.volume_fraction:.4f}"
              f"  g {record.constraint:+.4f}  change {record.change:.5f}")
        if args.snapshot_every > 0 and it % args.snapshot_every == 0:
            _write_stack(stack, pipeline.grid, snapshot_dir,
                         prefix=f"iter{it:05d}_", csv_sidecar=False)

    try:
        result = optimize(config, pipeline=pipeline, iteration_callback=callback)
    except SolverConvergenceError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        for r in getattr(exc, "residuals", [])[:10]:
            print(f"  residual {r:.3e}", file=sys.stderr)
        return 3

    _write_stack(result.stack, pipeline.grid, args.out, csv_sidecar=args.csv_fields)
    write_iteration_log(result.records, os.path.join(args.out, "iterations.csv"))
    report = machinability_check(result.stack.projected, pipeline.grid,
                                 config.shadow.directions)
    with open(os.path.join(args.out, "machinability.txt"), "w") as fh:
        fh.write(report.summary() + "\n")
    print(f"final compliance {result.compliance:.6g} after "
          f"{len(result.records)} iterations "
          f"({'converged' if result.converged else 'iteration limit'})")
    print(report.summary())
    return 0


if __name__ == "__main__":
    sys.exit(main())
