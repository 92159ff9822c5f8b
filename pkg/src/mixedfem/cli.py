"""Command-line driver for the membrane and perforated-plate benchmarks.

Config files hold flat ``key = value`` lines: benchmark, element, refine,
increments, tol, max_global_iter, cm_solver, hr_relaxed, plus material overrides
(youngs_modulus, poisson_ratio, yield_stress, isotropic_hardening,
kinematic_hardening). Optional ``[run]`` and ``[material]`` headers are accepted.
Command-line flags win over file values.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from .benchmarks import BENCHMARKS, BenchmarkSpec, build_benchmark, convergence_table, quantity_of_interest
from .errors import ConfigError, MixedFemError
from .solver import run_analysis

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3
HISTORY_COLUMNS = ("step", "load_factor", "control_disp", "reaction", "qoi_disp", "global_iters")
FIELD_COLUMNS = ("element", "site", "x", "y", "sigma_xx", "sigma_yy", "sigma_xy",
                 "eps_p_xx", "eps_p_yy", "gamma_p_xy", "alpha_i")
MATERIAL_KEYS = ("youngs_modulus", "poisson_ratio", "yield_stress", "isotropic_hardening", "kinematic_hardening")

log = logging.getLogger(__name__)


def fmt(x) -> str:
    return f"{float(x):.11e}"


def parse_refine(text: str, benchmark: str) -> tuple:
    parts = str(text).lower().replace(" ", "").split("x")
    try:
        ref = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"cannot parse refinement {text!r}") from None
    if benchmark == "plate" and len(ref) == 1:
        ref = (ref[0], 2 * ref[0])
    return ref


def parse_refine_list(text: str, benchmark: str) -> list:
    return [parse_refine(t, benchmark) for t in str(text).split(",") if t.strip()]


def load_config(path) -> dict:
    """Flat dictionary of run settings and material overrides from an INI file.

    A file without section headers is read as a single flat ``[run]`` section;
    material keys may then appear alongside the run keys.
    """
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = set(parser.sections()) - {"run", "material"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    out = dict(parser["run"]) if parser.has_section("run") else {}
    material = {k: out.pop(k) for k in list(out) if k in MATERIAL_KEYS}
    if parser.has_section("material"):
        bad = set(parser["material"]) - set(MATERIAL_KEYS)
        if bad:
            raise ConfigError(f"unknown material keys {sorted(bad)}")
        material.update(parser["material"])
    try:
        if material:
            out["material"] = {k: float(v) for k, v in material.items()}
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return out


def resolve_spec(file_cfg: dict, refine=None, **flags) -> BenchmarkSpec:
    merged = dict(file_cfg)
    merged.update({k: v for k, v in flags.items() if v is not None})
    try:
        benchmark = merged["benchmark"]
        element = merged["element"]
    except KeyError as exc:
        raise ConfigError(f"missing setting {exc.args[0]!r}") from None
    if refine is None:
        if "refine" not in merged:
            raise ConfigError("missing setting 'refine'")
        refine = parse_refine(merged["refine"], benchmark)
    try:
        return BenchmarkSpec(
            benchmark, refine, element,
            increments=None if merged.get("increments") is None else int(merged["increments"]),
            material=dict(merged.get("material", {})),
            hr_relaxed=_as_bool(merged.get("hr_relaxed", False)),
            cm_solver=merged.get("cm_solver", "return_mapping"),
            tol=float(merged.get("tol", 1e-8)),
            max_global_iter=int(merged.get("max_global_iter", 25)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def manifest(spec: BenchmarkSpec, status: str, failure=None) -> dict:
    problem, config = build_benchmark(spec)
    mat = problem.material
    return {
        "benchmark": spec.benchmark,
        "element": spec.element,
        "refine": list(spec.refinement),
        "increments": config.increments,
        "control": config.control,
        "amplitude": config.amplitude,
        "tol": config.tol,
        "max_global_iter": config.max_global_iter,
        "max_bisections": config.max_bisections,
        "cm_solver": spec.cm_solver,
        "hr_relaxed": spec.hr_relaxed,
        "material": {
            "youngs_modulus": mat.youngs_modulus,
            "poisson_ratio": mat.poisson_ratio,
            "yield_stress": mat.yield_stress,
            "isotropic_hardening": mat.isotropic_hardening,
            "kinematic_hardening": mat.kinematic_hardening,
            "plane_assumption": mat.plane_assumption,
        },
        "n_elements": int(len(problem.mesh.elements)),
        "n_nodes": int(len(problem.mesh.nodes)),
        "status": status,
        "failure": None if failure is None else str(failure),
    }


def write_history(path: Path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in records:
            w.writerow([r.step, fmt(r.load_factor), fmt(r.control_disp), fmt(r.reaction), fmt(r.qoi_disp),
                        r.global_iters])


def write_fields(path: Path, result) -> None:
    ops = result.model.ops
    hist = result.state.history
    coords = ops.site_coords
    sig = hist.stress
    ep = hist.state.plastic_strain
    alpha = hist.state.isotropic_var
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_COLUMNS)
        for e in range(sig.shape[0]):
            for s in range(sig.shape[1]):
                w.writerow([e, s, *map(fmt, coords[e, s]), *map(fmt, sig[e, s]), *map(fmt, ep[e, s]),
                            fmt(alpha[e, s])])


def run_spec(spec: BenchmarkSpec, out: Path) -> tuple[int, float | None, str | None]:
    """Run one benchmark into ``out``; returns (exit code, final quantity, failure message)."""
    out.mkdir(parents=True, exist_ok=True)
    problem, config = build_benchmark(spec)
    result = run_analysis(problem, config)
    write_history(out / "history.csv", result.records)
    write_fields(out / "fields.csv", result)
    status = "completed" if result.completed else "failed"
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest(spec, status, result.failure), fh, indent=2, sort_keys=True)
        fh.write("\n")
    value = quantity_of_interest(spec, result.records[-1]) if result.completed and result.records else None
    failure = None if result.completed else str(result.failure)
    return (EXIT_OK if result.completed else EXIT_SOLVER), value, failure


def _run_job(args):
    spec, out = args
    return run_spec(spec, Path(out))


def refinement_size(spec: BenchmarkSpec) -> int:
    return int(np.prod(spec.refinement))


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def cli(verbose):
    """Elastoplastic mixed finite element benchmarks."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _common(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(), default=None, help="INI config file."),
        click.option("--benchmark", type=click.Choice(BENCHMARKS), default=None),
        click.option("--element", default=None, help="Element tag, e.g. HR-Q4."),
        click.option("--increments", type=int, default=None),
        click.option("--tol", type=float, default=None, help="Relative global residual tolerance."),
        click.option("--cm-solver", type=click.Choice(["return_mapping", "interior_point", "sqp"]), default=None),
        click.option("--hr-relaxed/--no-hr-relaxed", default=None),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


@cli.command()
@_common
@click.option("--refine", default=None, help="n for cook, n_r x n_c for plate (e.g. 6x12).")
@click.option("--out", type=click.Path(), required=True)
def run(config_path, benchmark, element, increments, tol, cm_solver, hr_relaxed, refine, out):
    """Run one benchmark analysis and write history, fields and manifest."""
    cfg = load_config(config_path)
    if refine is not None:
        cfg["refine"] = refine
    spec = resolve_spec(cfg, benchmark=benchmark, element=element, increments=increments, tol=tol,
                        cm_solver=cm_solver, hr_relaxed=hr_relaxed)
    code, value, failure = run_spec(spec, Path(out))
    if code:
        click.echo(f"solver failure: {failure}", err=True)
    else:
        click.echo(f"{spec.benchmark} {spec.element} {spec.label}: final quantity {fmt(value)}")
    sys.exit(code)


@cli.command()
@_common
@click.option("--refine-list", required=True, help="Comma-separated refinements, e.g. 4,8,16 or 6x12,19x38.")
@click.option("--elements", default=None, help="Comma-separated element tags (overrides --element).")
@click.option("--jobs", type=int, default=1, help="Concurrent runs.")
@click.option("--out", type=click.Path(), required=True)
def converge(config_path, benchmark, element, increments, tol, cm_solver, hr_relaxed, refine_list, elements,
             jobs, out):
    """Refinement sweep with a per-element convergence table."""
    cfg = load_config(config_path)
    bench = benchmark or cfg.get("benchmark")
    if bench is None:
        raise ConfigError("missing setting 'benchmark'")
    tags = elements.split(",") if elements else [element or cfg.get("element")]
    refs = parse_refine_list(refine_list, bench)
    specs = [resolve_spec(cfg, refine=r, benchmark=bench, element=tag, increments=increments, tol=tol,
                          cm_solver=cm_solver, hr_relaxed=hr_relaxed) for tag in tags for r in refs]
    if not specs:
        raise ConfigError("empty refinement list")
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    jobs_args = [(s, root / s.element / s.label) for s in specs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_job, jobs_args))
    else:
        outcomes = [_run_job(a) for a in jobs_args]
    code = EXIT_OK
    with open(root / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["element", "refine", "size", "value", "rel_delta_to_finest"])
        for tag in tags:
            done = {s.label: (refinement_size(s), v) for s, (c, v, _) in zip(specs, outcomes)
                    if s.element == tag and c == EXIT_OK}
            for s, (c, _, msg) in zip(specs, outcomes):
                if s.element == tag and c != EXIT_OK:
                    code = EXIT_SOLVER
                    click.echo(f"{tag} {s.label}: solver failure: {msg}", err=True)
            if not done:
                continue
            for row in convergence_table(done):
                delta = row["rel_delta_to_finest"]
                w.writerow([tag, row["refine"], row["size"], fmt(row["value"]), "" if delta is None else fmt(delta)])
                click.echo(f"{tag:8s} {row['refine']:>6s} {row['value']: .8e}")
    sys.exit(code)


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--benchmark", type=click.Choice(BENCHMARKS), default=None)
@click.option("--element", default=None)
@click.option("--refine-list", required=True)
@click.option("--supports", type=click.Choice(["benchmark", "minimal", "none"]), default="benchmark",
              help="Constrained space for the eigenproblem.")
@click.option("--samples", type=int, default=0, help="Random samples for the direct inf-sup estimate.")
@click.option("--out", type=click.Path(), required=True)
def stability(config_path, benchmark, element, refine_list, supports, samples, out):
    """Generalized-eigenvalue inf-sup test over a refinement sequence."""
    from .stability import infsup_test

    cfg = load_config(config_path)
    bench = benchmark or cfg.get("benchmark")
    if bench is None:
        raise ConfigError("missing setting 'benchmark'")
    specs = [resolve_spec(cfg, refine=r, benchmark=bench, element=element)
             for r in parse_refine_list(refine_list, bench)]
    problems = [build_benchmark(s)[0] for s in specs]
    report = infsup_test(problems, specs[0].element, [s.label for s in specs], supports=supports,
                         n_samples=samples)
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    report.write_csv(root / "stability.csv")
    for e in report.entries:
        click.echo(f"{e.label:>6s} h={e.mesh_h:.4e} lambda_min={e.lambda_min:.6e} rank_C={e.rank_c} {e.flag}")
    click.echo("unstable" if report.unstable else "stable")
    sys.exit(EXIT_OK)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="mixedfem", standalone_mode=False)
    except SystemExit as exc:
        return int(exc.code or 0)
    except click.exceptions.Abort:
        return 1
    except (click.UsageError, click.BadParameter) as exc:
        click.echo(f"config error: {exc.format_message()}", err=True)
        return EXIT_CONFIG
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except MixedFemError as exc:
        click.echo(f"solver failure: {exc}", err=True)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
