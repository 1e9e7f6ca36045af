"""Command-line entry point: simulate | estimate | study | version."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .estimation import EstimationOptions, ObservationSchedule, estimate, evaluate_model
from .forward import (AlignmentError, RcDiscretization, UniformGrid, sample_at_observation, solve_df, solve_rc, solve_reference,
                      write_field_csv, write_trace_csv)
from .problem import (KELVIN_OFFSET, ParameterKind, ReferenceScales, WallProblem, get_material, nondimensionalize,
                      problem_from_dict, problem_to_dict)
from .reliability import (CaseConfig, ObservationSample, case_presets, derive_seed, generate_observation_sample,
                          run_case_study)

log = logging.getLogger("heatident")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _temp(values_K, kelvin: bool):
    return np.asarray(values_K) if kelvin else np.asarray(values_K) - KELVIN_OFFSET


def _temp_col(kelvin: bool) -> str:
    return "T_K" if kelvin else "T_C"


def _write_manifest(out: Path, command: str, args: argparse.Namespace, resolved: dict, base_seed, outputs: list,
                    extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config_path": getattr(args, "config", None),
        "resolved_config": resolved,
        "base_seed": base_seed,
        "tool_version": __version__,
        "numpy_version": np.__version__,
        "python": platform.python_version(),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str) + "\n")


def _resolve_seed(args, config_seed=None) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("HEATIDENT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"HEATIDENT_SEED must be an integer, got {env!r}") from None
    return int(config_seed) if config_seed is not None else 0


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None


def _problem_from_args(args) -> tuple[WallProblem, ReferenceScales, CaseConfig | None]:
    """Problem either from a JSON descriptor or from a case preset row."""
    if args.config:
        try:
            problem, scales = problem_from_dict(_load_json(args.config))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"invalid problem descriptor: {exc}") from None
        return problem, scales, None
    try:
        cfg = case_presets(args.case)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    if args.material is not None:
        try:
            material = get_material(args.material)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from None
        row = next((r for r in cfg.rows if r.material.id == material.id), None)
        if row is None:
            row = replace(cfg.rows[0], material=material, label=str(material.id))
    else:
        row = cfg.rows[0] if args.row is None else next((r for r in cfg.rows if r.label == str(args.row)), None)
        if row is None:
            raise UsageError(f"unknown row {args.row!r} for case {cfg.case}")
    if args.hl is not None:
        row = replace(row, h_L=float(args.hl))
    return cfg.problem(row), cfg.scales, cfg


def _schedule(problem: WallProblem, args) -> ObservationSchedule:
    step = float(args.obs_step)
    count = int(round(problem.t_f / step)) + 1
    x_obs = problem.L / 2 if args.x_obs is None else float(args.x_obs)
    return ObservationSchedule.uniform(x_obs, step, count)


# --- simulate --------------------------------------------------------

def cmd_simulate(args) -> int:
    problem, scales, _ = _problem_from_args(args)
    sched = _schedule(problem, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = args.model.lower()
    extra = {}
    outputs = []
    if model == "df":
        dp = nondimensionalize(problem, scales)
        grid = UniformGrid.from_dimensional(problem, dp, args.dx, args.dt)
        trace = solve_df(dp, grid, L=problem.L)
        values = sample_at_observation(trace, sched.x_obs, sched.instants)
        if args.full_field:
            write_field_csv(out / "field_df.csv", trace)
            outputs.append("field_df.csv")
    elif model == "rc":
        trace = solve_rc(problem, RcDiscretization.for_problem(problem, args.dt))
        values = sample_at_observation(trace, None, sched.instants)
    else:
        ref = solve_reference(nondimensionalize(problem, scales), sched.instants, args.sigma_check,
                              x_obs_star=sched.x_obs / problem.L)
        values = ref.values
        extra["accuracy_estimate_K"] = ref.accuracy_estimate
        extra["reference_grid"] = {"n_x": ref.n_x, "dt_s": ref.dt}
    if args.sensitivity:
        outputs.append(_write_sensitivity(out, problem, scales, sched, model, args))
    name = f"sensor_{model}.csv"
    write_trace_csv(out / name, sched.instants, {_temp_col(args.kelvin): _temp(values, args.kelvin)})
    outputs.append(name)
    resolved = {"problem": problem_to_dict(problem, scales), "model": model, "x_obs": sched.x_obs,
                "obs_step": args.obs_step, "dt": args.dt, "dx": args.dx}
    _write_manifest(out, "simulate", args, resolved, None, outputs, extra)
    print(f"wrote {len(values)} sensor values to {out / name}")
    return EXIT_OK


def _parse_param(text: str) -> ParameterKind:
    try:
        return ParameterKind.parse(text)
    except ValueError:
        raise UsageError(f"unknown parameter {text!r}; expected c, k or hl") from None


def _write_sensitivity(out: Path, problem: WallProblem, scales: ReferenceScales, sched: ObservationSchedule,
                       model: str, args) -> str:
    param = _parse_param(args.sensitivity)
    if model == "reference":
        raise UsageError("sensitivities are available for the df and rc models only")
    opts = EstimationOptions(model=model, param=param, dt=args.dt, dx=args.dx, scales=scales)
    _, S = evaluate_model(problem, sched, opts)
    name = f"sensitivity_{model}_{param.value}.csv"
    write_trace_csv(out / name, sched.instants, {"dudp": S})
    return name


# --- estimate --------------------------------------------------------

def read_observation_csv(path, x_obs: float) -> tuple[ObservationSchedule, np.ndarray]:
    """Parse a ``t_s,T_C`` or ``t_s,T_K`` sensor file; values returned in K."""
    try:
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise UsageError(f"observation file not found: {path}") from None
    if not rows:
        raise UsageError("observation file is empty")
    header = [h.strip() for h in rows[0]]
    if len(header) != 2 or header[0] != "t_s" or header[1] not in ("T_C", "T_K"):
        raise UsageError(f"observation header must be 't_s,T_C' or 't_s,T_K', got {','.join(header)!r}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise UsageError(f"non-numeric entry in observation file: {exc}") from None
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
        raise UsageError("observation file needs at least two rows of two columns")
    if not np.all(np.isfinite(data)):
        raise UsageError("observation file contains non-finite values")
    try:
        sched = ObservationSchedule(x_obs, data[:, 0])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    values = data[:, 1] + (0.0 if header[1] == "T_K" else KELVIN_OFFSET)
    return sched, values


def cmd_estimate(args) -> int:
    problem, scales, _ = _problem_from_args(args)
    param = _parse_param(args.param)
    p_config = problem.parameter(param)
    base_seed = None
    if args.obs:
        x_obs = problem.L / 2 if args.x_obs is None else float(args.x_obs)
        sched, values = read_observation_csv(args.obs, x_obs)
        obs = ObservationSample(sched, values, float("nan"), -1, args.p_real, np.zeros(sched.K))
        p_real = args.p_real
    else:
        base_seed = _resolve_seed(args)
        sched = _schedule(problem, args)
        obs = generate_observation_sample(problem, p_config, sched, args.sigma, derive_seed(base_seed, 0),
                                          param=param, scales=scales)
        p_real = p_config
    opts = EstimationOptions(model=args.model, param=param, eta1=args.eta1, eta2=args.eta2,
                             max_iterations=args.max_iterations, dt=args.dt, dx=args.dx, scales=scales)
    p_apr = args.guess_factor * p_config if args.p_apr is None else args.p_apr
    result = estimate(problem, obs, opts, p_apr=p_apr, p_real=p_real)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(json.dumps(result.to_dict(), indent=1) + "\n")
    with (out / "history.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "p", "J", "gamma1", "gamma2"])
        for h in result.history:
            w.writerow([h.m, format(h.p, ".17g"), format(h.J, ".17g"), format(h.gamma1, ".17g"),
                        format(h.gamma2, ".17g")])
    resolved = {"problem": problem_to_dict(problem, scales), "model": opts.model, "param": param.value,
                "sigma_obs": None if args.obs else args.sigma, "p_apr": p_apr, "obs": args.obs,
                "eta1": args.eta1, "eta2": args.eta2, "max_iterations": args.max_iterations}
    _write_manifest(out, "estimate", args, resolved, base_seed, ["result.json", "history.csv"])
    ratio = f" ratio={result.ratio:.6f}" if result.ratio is not None else ""
    print(f"p_est={result.p_est:.9g}{ratio} N_m={result.N_m} converged={result.converged}")
    return EXIT_OK


# --- study -----------------------------------------------------------

def _study_config(args) -> CaseConfig:
    try:
        cfg = case_presets(args.case)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    overrides = _load_json(args.config) if args.config else {}
    allowed = {"n_samples", "sigma_obs", "guess_factor", "base_seed", "max_iterations", "eta1", "eta2"}
    unknown = set(overrides) - allowed - {"rows", "case"}
    if unknown:
        raise UsageError(f"unsupported study config keys: {sorted(unknown)}")
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if k in allowed})
    if args.samples is not None:
        if args.samples < 1:
            raise UsageError("--samples must be at least 1")
        cfg = replace(cfg, n_samples=args.samples)
    if args.sigma is not None:
        if args.sigma < 0:
            raise UsageError("--sigma must be non-negative")
        cfg = replace(cfg, sigma_obs=args.sigma)
    rows = args.rows.split(",") if args.rows else overrides.get("rows")
    if rows:
        try:
            cfg = cfg.select(rows)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from None
    return replace(cfg, base_seed=_resolve_seed(args, overrides.get("base_seed")))


def _write_plot_data(out: Path, report, cfg: CaseConfig, kelvin: bool) -> list[str]:
    written = []
    with (out / "plot_ratio.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["material_or_case", "model", "p_real", "p_est_E", "ratio_E", "ratio_sigma"])
        for e in report.entries:
            if e.ratio is None:
                continue
            w.writerow([e.row.label, e.model, format(e.p_real, ".17g"), format(e.ratio.mean * e.p_real, ".17g"),
                        format(e.ratio.mean, ".17g"), format(e.ratio.std, ".17g")])
    written.append("plot_ratio.csv")
    with (out / "plot_iterations.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["material_or_case", "model", "Nm_E", "Nm_sigma", "tcpu_E", "tcpu_sigma"])
        for e in report.entries:
            if e.iterations is None:
                continue
            w.writerow([e.row.label, e.model, format(e.iterations.mean, ".17g"), format(e.iterations.std, ".17g"),
                        format(e.wall_time.mean, ".17g"), format(e.wall_time.std, ".17g")])
    written.append("plot_iterations.csv")
    sched = cfg.schedule()
    for row in cfg.rows:
        name = f"plot_gamma_{row.label}.csv"
        with (out / name).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "m", "gamma1_E", "gamma2_E", "n"])
            for model in report.models:
                for g in report.entry(row.label, model).gamma_profile():
                    w.writerow([model, g["m"], format(g["gamma1_E"], ".17g"), format(g["gamma2_E"], ".17g"), g["n"]])
        written.append(name)
        # overlay: first noisy sample against predictions at the mean estimate
        problem = cfg.problem(row)
        p_real = problem.parameter(cfg.param)
        obs = generate_observation_sample(problem, p_real, sched, cfg.sigma_obs, derive_seed(cfg.base_seed, 0),
                                          reference=report.references[row.label])
        cols = {f"obs_{_temp_col(kelvin)}": _temp(obs.values, kelvin)}
        for model in report.models:
            e = report.entry(row.label, model)
            if e.ratio is None:
                continue
            q = problem.with_parameter(cfg.param, e.ratio.mean * p_real)
            if model == "DF":
                dp = nondimensionalize(q, cfg.scales)
                tr = solve_df(dp, UniformGrid.from_dimensional(q, dp, cfg.dx, cfg.dt), stride=100, L=q.L)
            else:
                tr = solve_rc(q, RcDiscretization.for_problem(q, cfg.dt))
            cols[f"{model}_{_temp_col(kelvin)}"] = _temp(sample_at_observation(tr, sched.x_obs, sched.instants), kelvin)
        name = f"plot_temperature_{row.label}.csv"
        write_trace_csv(out / name, sched.instants, cols)
        written.append(name)
    return written


def cmd_study(args) -> int:
    cfg = _study_config(args)
    models = ("DF", "RC") if args.models.lower() in ("both", "all") else tuple(
        m.strip().upper() for m in args.models.split(","))
    if any(m not in ("DF", "RC") for m in models):
        raise UsageError(f"--models must be df, rc or both, got {args.models!r}")
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_case_study(cfg, models, jobs=args.jobs, progress=log.info if not args.quiet else None)
    report.write_json(out / "report.json")
    report.write_table_csv(out / "table.csv")
    outputs = ["report.json", "table.csv"]
    if not args.no_plot_data:
        outputs += _write_plot_data(out, report, cfg, args.kelvin)
    _write_manifest(out, "study", args, {"case_config": cfg.to_dict(), "models": list(models)}, cfg.base_seed,
                    outputs, {"failures": report.failures, "partial": report.failures > 0,
                              "fingerprint": report.fingerprint()})
    for r in report.table_rows():
        print(f"{r[0]:>4} {r[1]}  E[ratio]={r[2]:.4f}  sigma={r[3]:.4f}  E[N_m]={r[4]:.2f}  E[t]={r[6]:.3f}s")
    return EXIT_OK


# --- parser ------------------------------------------------------------

def _add_problem_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON problem descriptor (overrides --case/--material)")
    p.add_argument("--case", default="A", help="preset case A, B or C (default A)")
    p.add_argument("--material", type=int, help="material id from the materials table")
    p.add_argument("--row", help="preset row label (case C: 1-4)")
    p.add_argument("--hl", type=float, help="override the left surface coefficient, W/(m2 K)")
    p.add_argument("--x-obs", type=float, help="sensor position in m (default L/2)")
    p.add_argument("--obs-step", type=float, default=360.0, help="observation spacing in s")
    p.add_argument("--dt", type=float, default=3.6, help="solver time step in s")
    p.add_argument("--dx", type=float, default=2.2e-3, help="DF space step in m")
    p.add_argument("--kelvin", action="store_true", help="write temperatures in K instead of Celsius")
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heatident", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one direct model and write the sensor trace")
    _add_problem_args(p)
    p.add_argument("--model", choices=["df", "rc", "reference"], default="df")
    p.add_argument("--sigma-check", type=float, default=0.02, help="reference accuracy target in K")
    p.add_argument("--full-field", action="store_true", help="also write every DF node at every level")
    p.add_argument("--sensitivity", metavar="PARAM", help="also write the sensor sensitivity to c, k or hl (df/rc)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate one parameter from observations")
    _add_problem_args(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--obs", help="observation CSV (t_s,T_C or t_s,T_K)")
    src.add_argument("--synthetic", action="store_true", help="generate noisy observations from the reference")
    p.add_argument("--model", type=str.upper, choices=["DF", "RC"], default="DF")
    p.add_argument("--param", default="c", help="c, k or hl")
    p.add_argument("--sigma", type=float, default=0.2, help="observation noise std in K (synthetic)")
    p.add_argument("--seed", type=int)
    p.add_argument("--p-apr", type=float, help="initial guess (default guess-factor * configured value)")
    p.add_argument("--p-real", type=float, help="true value, if known, for the ratio")
    p.add_argument("--guess-factor", type=float, default=0.1)
    p.add_argument("--eta1", type=float, default=1e-6)
    p.add_argument("--eta2", type=float, default=1e-6)
    p.add_argument("--max-iterations", type=int, default=100)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("study", help="Monte Carlo reliability study for a preset case")
    p.add_argument("case", help="A, B or C")
    p.add_argument("--config", help="JSON with study overrides (n_samples, sigma_obs, guess_factor, base_seed, rows)")
    p.add_argument("--samples", type=int)
    p.add_argument("--models", default="both", help="df, rc, or both")
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--rows", help="comma-separated row labels to run")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--kelvin", action="store_true")
    p.add_argument("--no-plot-data", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("version", help="print the tool version")
    p.set_defaults(func=lambda args: print(__version__) or EXIT_OK)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, AlignmentError) as exc:
        print(f"heatident: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.debug("internal failure", exc_info=True)
        print(f"heatident: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
