"""Command-line entry point.

Commands:
    mesh gen|refine|check   mesh generation, refinement, validation
    bdf-angles              BDF coefficients and measured stability angles
    run <cfg>               one experiment from a key=value config file
    probe <cfg>             sector sweeps and R-bound sampling

Exit codes: 0 all verdicts pass, 1 a verdict or check failed, 2 usage or
config error.  Config files are flat `key = value` text with '#' comments;
every key is documented in the subcommand's --help.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .mesh import (
    MeshError,
    generate_square_mesh,
    generate_lshape_mesh,
    refine_uniform,
    load_mesh,
    save_mesh,
    validate_mesh,
    mesh_size,
    quasi_uniformity_ratio,
)
from .fem import FESpace, assemble, coefficient_field
from .bdf import REFERENCE_STABILITY_ANGLES, bdf_coefficients, stability_angle
from .harness import ConfigError, ExperimentConfig, run_experiment
from .spectral import build_sector_sample, extreme_eigenvalues, operator_norm_q, rbound_sample, resolvent_apply


# ---------------------------------------------------------------------------
# config files


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_float(s: str) -> float:
    return math.inf if s.lower() in ("inf", "infinity") else float(s)


def _parse_int_list(s: str) -> tuple:
    return tuple(int(x) for x in s.replace(" ", "").split(",") if x)


def _parse_float_list(s: str) -> tuple:
    return tuple(_parse_float(x) for x in s.replace(" ", "").split(",") if x)


# key -> (parser, default, help); defaults of None mean "required"
RUN_CONFIG_SCHEMA = {
    "experiment": (str, None, "one of maxreg, equivalence, error, linfty, w1q, decay"),
    "domain": (str, "square", "square | lshape"),
    "coefficients": (str, "smooth", "identity | smooth | rough diffusion tensor"),
    "degree": (int, 1, "Lagrange polynomial degree (1..4)"),
    "k_list": (_parse_int_list, (1,), "comma-separated BDF step numbers, each in 1..6"),
    "levels": (int, 3, "number of refinement levels (>= 3 for boundedness claims)"),
    "n0": (int, 4, "grid subdivisions per side at the coarsest level"),
    "tau0": (float, 0.1, "time step at the coarsest level"),
    "tau_coupling": (str, "h", "h | h2 | fixed: how tau shrinks with the mesh"),
    "steps0": (int, 16, "time steps at the coarsest level; final time = tau0 * steps0"),
    "p_list": (_parse_float_list, (2.0, 4.0), "temporal exponents (comma separated, inf allowed)"),
    "q_list": (_parse_float_list, (2.0, 4.0), "spatial exponents (comma separated, inf allowed)"),
    "forcing": (str, "separable", "separable | modal | random forcing library entry"),
    "starting": (str, "zero", "zero | projected-reference starting-value policy"),
    "start_profile": (str, "modal", "decay experiment start: modal | random"),
    "ref_refines": (int, 2, "error/linfty reference space refinements (h_ref = h/2^this)"),
    "oracle_cells": (_parse_bool, True, "add modal cells checked against the scalar recurrence"),
    "seed": (int, 0, "seed for all randomness in the experiment"),
    "jobs": (int, 0, "worker threads for independent cells (0 = number of CPUs)"),
    "out": (str, "report", "output prefix: writes <out>.csv and <out>.json"),
}

PROBE_CONFIG_SCHEMA = {
    "probe": (str, "sweep", "sweep | rbound | both"),
    "domain": (str, "square", "square | lshape"),
    "coefficients": (str, "identity", "identity | smooth | rough diffusion tensor"),
    "degree": (int, 1, "Lagrange polynomial degree (1..4)"),
    "n0": (int, 4, "grid subdivisions per side at the coarsest level"),
    "levels": (int, 2, "number of mesh levels to compare"),
    "theta_list": (_parse_float_list, (0.3,), "sector half-angles as fractions of pi, each < 0.5"),
    "q_list": (_parse_float_list, (2.0,), "spatial exponents for operator norms"),
    "n_radii": (int, 25, "log-spaced radii per ray in the sector sample"),
    "trials": (int, 200, "random batches for R-bound sampling"),
    "m_points": (int, 3, "resolvent points per R-bound sample"),
    "restarts": (int, 5, "power-iteration restarts for q != 2 norms"),
    "iters": (int, 50, "power-iteration steps per restart"),
    "uniformity_tol": (float, 0.10, "allowed envelope change between the two finest levels"),
    "seed": (int, 0, "seed for all randomness in the probes"),
    "out": (str, "probe", "output prefix: writes <out>.csv (+_rbound.csv) and <out>.json"),
}


def parse_config_file(path, schema: dict) -> dict:
    """Parse flat `key = value` text; unknown keys and bad values are errors."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for ln, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{ln}: expected 'key = value', got {text!r}")
        key, _, val = text.partition("=")
        key, val = key.strip(), val.strip()
        if key not in schema:
            raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{ln}: duplicate config key {key!r}")
        parser = schema[key][0]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{ln}: bad value for {key}: {exc}") from None
    for key, (_, default, _) in schema.items():
        if key not in values:
            if default is None:
                raise ConfigError(f"{path}: missing required config key {key!r}")
            values[key] = default
    return values


def _schema_epilog(schema: dict) -> str:
    lines = ["config keys:"]
    for key, (_, default, help_text) in schema.items():
        shown = "required" if default is None else f"default {default!r}"
        lines.append(f"  {key:<16} {help_text} ({shown})")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# subcommands


def cmd_mesh(args) -> int:
    if args.mesh_command == "gen":
        gen = generate_square_mesh if args.domain == "square" else generate_lshape_mesh
        mesh = gen(args.n)
        save_mesh(mesh, args.out)
        print(f"wrote {args.out}: {mesh.num_vertices} nodes, {mesh.num_triangles} triangles, "
              f"h = {mesh_size(mesh):.6g}")
        return 0
    if args.mesh_command == "refine":
        mesh = load_mesh(args.infile)
        for _ in range(args.levels):
            mesh = refine_uniform(mesh)
        out = args.out or args.infile
        save_mesh(mesh, out)
        print(f"wrote {out}: {mesh.num_vertices} nodes, {mesh.num_triangles} triangles, "
              f"h = {mesh_size(mesh):.6g}")
        return 0
    if args.mesh_command == "check":
        mesh = load_mesh(args.infile, validate=False)
        validate_mesh(mesh, area=float(mesh.signed_areas().sum()))
        print(f"{args.infile}: OK — {mesh.num_vertices} nodes, {mesh.num_triangles} triangles, "
              f"h = {mesh_size(mesh):.6g}, quasi-uniformity {quasi_uniformity_ratio(mesh):.6g}, "
              f"area {float(mesh.signed_areas().sum()):.12g}")
        return 0
    raise AssertionError(args.mesh_command)


def cmd_bdf_angles(args) -> int:
    print(f"{'k':>2}  {'alpha/pi':>10}  {'reference':>9}  delta_0..delta_k")
    for k in range(1, 7):
        scheme = bdf_coefficients(k)
        alpha = stability_angle(k, samples=args.samples) / math.pi
        deltas = ", ".join(str(d) for d in scheme.delta)
        print(f"{k:>2}  {alpha:>10.5f}  {scheme.alpha_k:>9.3f}  [{deltas}]")
    return 0


def cmd_run(args) -> int:
    values = parse_config_file(args.config, RUN_CONFIG_SCHEMA)
    out_prefix = Path(args.out) if args.out else Path(values["out"])
    jobs = args.jobs if args.jobs is not None else values["jobs"]
    if jobs == 0:
        import os
        jobs = os.cpu_count() or 1
    config_kwargs = {k: v for k, v in values.items() if k != "out"}
    config_kwargs["jobs"] = jobs
    config = ExperimentConfig(**config_kwargs)

    if args.dry_run:
        print(f"experiment {config.experiment} on {config.domain} "
              f"({config.coefficients} coefficients, degree {config.degree})")
        for lv in range(config.levels):
            n = config.n0 * 2**lv
            print(f"  level {lv}: n = {n}, tau = {config.tau_at(lv):.6g}, N = {config.steps_at(lv)}")
        cells = [(k, p, q) for k in config.k_list for p in config.p_list for q in config.q_list]
        for k, p, q in cells:
            print(f"  cell k={k} p={p:g} q={q:g}")
        print(f"{config.levels * len(cells)} cells total")
        return 0

    report = run_experiment(config)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out_prefix.with_suffix(".csv")
    json_path = out_prefix.with_suffix(".json")
    report.write_csv(csv_path)
    report.write_json(json_path)
    n_fail = sum(not v["passed"] for v in report.verdicts)
    print(f"wrote {csv_path} and {json_path}: {len(report.rows)} cells, "
          f"{len(report.verdicts)} verdicts, {n_fail} failed")
    for v in report.verdicts:
        if not v["passed"]:
            print(f"  FAIL {v['name']}: {v['detail']}")
    return 0 if n_fail == 0 else 1


def cmd_probe(args) -> int:
    values = parse_config_file(args.config, PROBE_CONFIG_SCHEMA)
    out_prefix = Path(args.out) if args.out else Path(values["out"])
    for theta in values["theta_list"]:
        if not 0 < theta < 0.5:
            raise ConfigError(f"theta must be in (0, 0.5) as a fraction of pi, got {theta}")
    if values["probe"] not in ("sweep", "rbound", "both"):
        raise ConfigError(f"unknown probe {values['probe']!r}; choose sweep, rbound, or both")

    levels = []
    for lv in range(values["levels"]):
        n = values["n0"] * 2**lv
        mesh = generate_square_mesh(n) if values["domain"] == "square" else generate_lshape_mesh(n)
        space = FESpace(mesh, values["degree"])
        pair = assemble(space, coefficient_field(values["coefficients"]))
        levels.append(pair)

    rows = []
    rbound_rows = []
    verdicts = []
    envelopes: dict = {}

    if values["probe"] in ("sweep", "both"):
        for lv, pair in enumerate(levels):
            for theta_frac in values["theta_list"]:
                theta = theta_frac * math.pi
                sample = build_sector_sample(pair, theta, n_radii=values["n_radii"])
                for q in values["q_list"]:
                    sin_ok = True
                    worst = 0.0
                    for z in sample.points:
                        z = complex(z)
                        est = operator_norm_q(
                            pair.space,
                            lambda v, z=z: resolvent_apply(pair, z, v),
                            q,
                            restarts=values["restarts"],
                            iters=values["iters"],
                            adjoint=lambda v, z=z: resolvent_apply(pair, np.conj(z), v),
                            seed=values["seed"],
                        )
                        rows.append({"theta": theta_frac, "q": q, "re_z": z.real, "im_z": z.imag,
                                     "norm_estimate": est, "mesh_level": lv})
                        worst = max(worst, est)
                        if q == 2:
                            bound = 1.0 / math.sin(math.pi - abs(np.angle(z))) if abs(np.angle(z)) > 0 else math.inf
                            if est > bound + 1e-8:
                                sin_ok = False
                    envelopes[(theta_frac, q, lv)] = worst
                    if q == 2:
                        verdicts.append({"name": f"sin-bound theta={theta_frac:g}pi level={lv}",
                                         "passed": sin_ok, "detail": "self-adjoint resolvent bound"})
        for theta_frac in values["theta_list"]:
            for q in values["q_list"]:
                for lv in range(1, values["levels"]):
                    e0 = envelopes[(theta_frac, q, lv - 1)]
                    e1 = envelopes[(theta_frac, q, lv)]
                    delta = abs(e1 / e0 - 1.0)
                    is_finest = lv == values["levels"] - 1
                    if is_finest:
                        verdicts.append({
                            "name": f"uniformity theta={theta_frac:g}pi q={q:g} levels {lv - 1}->{lv}",
                            "passed": delta <= values["uniformity_tol"],
                            "detail": f"envelope change {delta:.4f} (tol {values['uniformity_tol']})",
                        })

    if values["probe"] in ("rbound", "both"):
        for lv, pair in enumerate(levels):
            lam_lo, lam_hi = extreme_eigenvalues(pair)
            for theta_frac in values["theta_list"]:
                theta = theta_frac * math.pi
                radii = np.geomspace(lam_lo * 0.1, lam_hi * 10.0, values["m_points"])
                zs = radii * np.exp(1j * (theta + 0.5 * math.pi))
                for q in values["q_list"]:
                    if not 1 < q < math.inf:
                        continue
                    est = rbound_sample(pair, q, zs, trials=values["trials"], seed=values["seed"],
                                        restarts=values["restarts"], iters=values["iters"])
                    rbound_rows.append({"theta": theta_frac, "q": q, "m": len(zs),
                                        "trials": values["trials"], "mesh_level": lv,
                                        "c_r_estimate": est, "seed": values["seed"]})

    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out_prefix.with_suffix(".csv")
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write("theta,q,re_z,im_z,norm_estimate,mesh_level\n")
        for r in rows:
            f.write(f"{r['theta']!r},{r['q']!r},{r['re_z']!r},{r['im_z']!r},"
                    f"{r['norm_estimate']!r},{r['mesh_level']}\n")
    written = [str(csv_path)]
    if rbound_rows:
        rb_path = out_prefix.parent / (out_prefix.name + "_rbound.csv")
        with open(rb_path, "w", encoding="utf-8") as f:
            f.write("theta,q,m,trials,mesh_level,c_r_estimate,seed\n")
            for r in rbound_rows:
                f.write(f"{r['theta']!r},{r['q']!r},{r['m']},{r['trials']},{r['mesh_level']},"
                        f"{r['c_r_estimate']!r},{r['seed']}\n")
        written.append(str(rb_path))
    json_path = out_prefix.with_suffix(".json")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump({"config": values, "verdicts": verdicts,
                   "envelopes": {f"theta={t:g}pi q={q:g} level={lv}": e
                                 for (t, q, lv), e in sorted(envelopes.items())},
                   "all_pass": all(v["passed"] for v in verdicts)},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    written.append(str(json_path))

    n_fail = sum(not v["passed"] for v in verdicts)
    print(f"wrote {', '.join(written)}: {len(rows) + len(rbound_rows)} probe rows, "
          f"{len(verdicts)} verdicts, {n_fail} failed")
    for v in verdicts:
        if not v["passed"]:
            print(f"  FAIL {v['name']}: {v['detail']}")
    return 0 if n_fail == 0 else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bdffem",
        description="BDF finite element laboratory: meshes, time stepping, and regularity probes",
    )
    parser.add_argument("--version", action="version", version=f"bdffem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    mesh_p = sub.add_parser("mesh", help="generate, refine, or validate mesh files")
    mesh_sub = mesh_p.add_subparsers(dest="mesh_command", required=True)
    gen_p = mesh_sub.add_parser("gen", help="generate a built-in mesh")
    gen_p.add_argument("--domain", choices=("square", "lshape"), default="square")
    gen_p.add_argument("--n", type=int, required=True, help="subdivisions per side")
    gen_p.add_argument("--out", required=True, help="output mesh file")
    ref_p = mesh_sub.add_parser("refine", help="uniformly refine a mesh file")
    ref_p.add_argument("--in", dest="infile", required=True, help="input mesh file")
    ref_p.add_argument("--levels", type=int, default=1, help="number of refinements")
    ref_p.add_argument("--out", help="output mesh file (default: overwrite input)")
    chk_p = mesh_sub.add_parser("check", help="validate a mesh file")
    chk_p.add_argument("--in", dest="infile", required=True, help="mesh file to validate")

    ang_p = sub.add_parser("bdf-angles", help="print BDF coefficients and stability angles")
    ang_p.add_argument("--samples", type=int, default=200_001,
                       help="boundary samples for the angle search (>= 10000)")

    run_p = sub.add_parser(
        "run",
        help="run one experiment from a config file",
        epilog=_schema_epilog(RUN_CONFIG_SCHEMA),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    run_p.add_argument("config", help="key = value config file")
    run_p.add_argument("--out", help="output prefix (overrides the config's 'out')")
    run_p.add_argument("--dry-run", action="store_true", help="print the cell grid without solving")
    run_p.add_argument("--jobs", type=int, help="worker threads (overrides the config's 'jobs')")

    probe_p = sub.add_parser(
        "probe",
        help="run sector sweeps / R-bound sampling from a config file",
        epilog=_schema_epilog(PROBE_CONFIG_SCHEMA),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    probe_p.add_argument("config", help="key = value config file")
    probe_p.add_argument("--out", help="output prefix (overrides the config's 'out')")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help; keep its code
        return int(exc.code or 0)
    try:
        if args.command == "mesh":
            return cmd_mesh(args)
        if args.command == "bdf-angles":
            return cmd_bdf_angles(args)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "probe":
            return cmd_probe(args)
        raise AssertionError(args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MeshError as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
