"""Monte Carlo reliability studies: synthetic noisy observations, repeated
estimation with each direct model, and summary statistics."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .estimation import EstimationOptions, ObservationSchedule, estimate
from .forward import ReferenceTrace, solve_reference
from .problem import (MATERIALS, DEFAULT_T0, ForcingSignal, Material, ParameterKind, ReferenceScales, WallProblem,
                      nondimensionalize)

log = logging.getLogger(__name__)

CASE_IDS = {"A": "A_capacity", "B": "B_conductivity", "C": "C_surface"}
CASE_PARAMS = {"A_capacity": ParameterKind.HEAT_CAPACITY, "B_conductivity": ParameterKind.CONDUCTIVITY,
               "C_surface": ParameterKind.SURFACE_COEFFICIENT_LEFT}
TABLE_HEADER = ["material_or_case", "model", "ratio_E", "ratio_sigma", "Nm_E", "Nm_sigma", "tcpu_E", "tcpu_sigma"]
WALL_TIME_COLUMNS = ("tcpu_E", "tcpu_sigma")


class ObservationAccuracyError(RuntimeError):
    """Reference solution is not accurate enough for the requested noise level."""


@dataclass(frozen=True)
class ObservationSample:
    schedule: ObservationSchedule
    values: np.ndarray  # K
    sigma_obs: float
    seed: int
    p_real: float | None
    noise: np.ndarray


def derive_seed(base_seed: int, index: int) -> int:
    """64-bit per-sample seed; independent of execution order."""
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def draw_noise(seed: int, size: int, sigma: float) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    return sigma * rng.standard_normal(size)


def generate_observation_sample(problem: WallProblem, p_real: float | None, schedule: ObservationSchedule,
                                sigma_obs: float, seed: int, *, param: ParameterKind | str | None = None,
                                scales: ReferenceScales | None = None,
                                reference: ReferenceTrace | None = None) -> ObservationSample:
    """Reference sensor trace at ``p_real`` plus i.i.d. Gaussian noise.

    If ``param`` is given, ``p_real`` overrides that parameter of ``problem``.
    A precomputed ``reference`` skips the (costly) reference solve.
    """
    if sigma_obs < 0:
        raise ValueError("sigma_obs must be non-negative")
    if param is not None and p_real is not None:
        problem = problem.with_parameter(param, p_real)
    target = sigma_obs / 10.0 if sigma_obs > 0 else 1e-3
    if reference is None:
        reference = solve_reference(nondimensionalize(problem, scales), schedule.instants, target,
                                    x_obs_star=schedule.x_obs / problem.L)
    if sigma_obs > 0 and not reference.accuracy_estimate < sigma_obs / 10.0:
        raise ObservationAccuracyError(
            f"reference accuracy {reference.accuracy_estimate:.3g} K is not below sigma_obs/10 = {sigma_obs / 10:.3g} K")
    if not np.array_equal(reference.times, schedule.instants):
        raise ValueError("reference trace was computed on a different schedule")
    noise = draw_noise(seed, schedule.K, sigma_obs)
    return ObservationSample(schedule, reference.values + noise, sigma_obs, int(seed), p_real, noise)


@dataclass(frozen=True)
class SummaryStatistics:
    mean: float
    std: float
    n: int


def summarize(values: Iterable[float]) -> SummaryStatistics:
    y = np.asarray(list(values), dtype=float)
    if y.size == 0:
        raise ValueError("cannot summarize an empty sample")
    mean = float(np.mean(y))
    return SummaryStatistics(mean, float(np.sqrt(np.mean((y - mean) ** 2))), int(y.size))


# --- case configurations ---------------------------------------------

@dataclass(frozen=True)
class CaseRow:
    label: str
    material: Material
    h_L: float


@dataclass(frozen=True)
class CaseConfig:
    case: str
    param: ParameterKind
    rows: tuple[CaseRow, ...]
    n_samples: int = 100
    sigma_obs: float = 0.2
    guess_factor: float = 0.1
    base_seed: int = 0
    L: float = 0.22
    h_R: float = 5.0
    T0: float = DEFAULT_T0
    x_obs: float = 0.11
    obs_step: float = 360.0
    n_obs: int = 201
    dt: float = 3.6
    dx: float = 2.2e-3
    eta1: float = 1e-6
    eta2: float = 1e-6
    max_iterations: int = 100
    scales: ReferenceScales = field(default_factory=ReferenceScales)

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("N_s must be at least 1")
        if self.sigma_obs < 0:
            raise ValueError("sigma_obs must be non-negative")
        if not self.guess_factor > 0:
            raise ValueError("guess_factor must be positive")

    def schedule(self) -> ObservationSchedule:
        return ObservationSchedule.uniform(self.x_obs, self.obs_step, self.n_obs)

    def problem(self, row: CaseRow) -> WallProblem:
        return WallProblem(L=self.L, h_L=row.h_L, h_R=self.h_R, T0=self.T0,
                           forcing_L=ForcingSignal.paper_left(self.T0), forcing_R=ForcingSignal.paper_right(self.T0),
                           t_f=self.obs_step * (self.n_obs - 1), material=row.material)

    def options(self, model: str) -> EstimationOptions:
        return EstimationOptions(model=model, param=self.param, eta1=self.eta1, eta2=self.eta2,
                                 max_iterations=self.max_iterations, dt=self.dt, dx=self.dx, scales=self.scales)

    def select(self, labels: Sequence[str]) -> "CaseConfig":
        wanted = [str(x) for x in labels]
        rows = tuple(r for r in self.rows if r.label in wanted)
        missing = set(wanted) - {r.label for r in rows}
        if missing:
            raise KeyError(f"unknown row(s) {sorted(missing)} for case {self.case}")
        return replace(self, rows=rows)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["param"] = self.param.value
        return d


def case_presets(case_id: str) -> CaseConfig:
    key = CASE_IDS.get(str(case_id).upper(), str(case_id))
    if key not in CASE_PARAMS:
        raise KeyError(f"unknown case id {case_id!r}; expected one of {sorted(CASE_IDS)}")
    if key == "C_surface":
        rows = tuple(CaseRow(str(i + 1), MATERIALS[3], h) for i, h in enumerate((0.5, 5.0, 10.0, 15.0)))
    else:
        rows = tuple(CaseRow(str(m.id), m, 15.0) for m in MATERIALS.values())
    return CaseConfig(case=key, param=CASE_PARAMS[key], rows=rows)


# --- study execution ---------------------------------------------------

@dataclass
class ReportEntry:
    row: CaseRow
    model: str
    p_real: float
    samples: list[dict]
    failures: int
    nonconverged: int
    ratio: SummaryStatistics | None
    iterations: SummaryStatistics | None
    wall_time: SummaryStatistics | None

    def config_row(self) -> dict:
        m = self.row.material
        return {"label": self.row.label, "material_id": m.id, "material": m.name, "c": m.c, "k": m.k,
                "h_L": self.row.h_L, "p_real": self.p_real}

    def gamma_profile(self) -> list[dict]:
        """Mean criteria per iteration index over the samples that reached it."""
        by_m: dict[int, list[tuple[float, float]]] = {}
        for s in self.samples:
            for h in s.get("history", []):
                by_m.setdefault(h["m"], []).append((h["gamma1"], h["gamma2"]))
        out = []
        for m in sorted(by_m):
            arr = np.asarray(by_m[m], dtype=float)
            out.append({"m": m, "gamma1_E": float(np.mean(arr[:, 0])), "gamma2_E": float(np.mean(arr[:, 1])),
                        "n": int(arr.shape[0])})
        return out

    def to_dict(self, case: str) -> dict:
        def stats(s):
            return None if s is None else {"mean": s.mean, "std": s.std}

        return {"case": case, "model": self.model, "config_row": self.config_row(),
                "N_s": len(self.samples), "ratio": stats(self.ratio), "iterations": stats(self.iterations),
                "wall_time": stats(self.wall_time), "failures": self.failures,
                "nonconverged": self.nonconverged, "samples": self.samples}


@dataclass
class ReliabilityReport:
    config: CaseConfig
    models: tuple[str, ...]
    entries: list[ReportEntry]
    references: dict[str, ReferenceTrace]

    @property
    def reference_accuracy(self) -> dict[str, float]:
        return {k: float(v.accuracy_estimate) for k, v in self.references.items()}

    def entry(self, label: str, model: str) -> ReportEntry:
        for e in self.entries:
            if e.row.label == str(label) and e.model == model.upper():
                return e
        raise KeyError((label, model))

    @property
    def failures(self) -> int:
        return sum(e.failures for e in self.entries)

    def to_dict(self) -> dict:
        return {"case": self.config.case, "config": self.config.to_dict(), "models": list(self.models),
                "reference_accuracy_K": self.reference_accuracy,
                "entries": [e.to_dict(self.config.case) for e in self.entries]}

    def table_rows(self) -> list[list]:
        rows = []
        for e in self.entries:
            vals = []
            for s in (e.ratio, e.iterations, e.wall_time):
                vals += [np.nan, np.nan] if s is None else [s.mean, s.std]
            rows.append([e.row.label, e.model, *vals])
        return rows

    def write_table_csv(self, path, *, include_wall_time: bool = True) -> None:
        header = [h for h in TABLE_HEADER if include_wall_time or h not in WALL_TIME_COLUMNS]
        keep = [TABLE_HEADER.index(h) for h in header]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in self.table_rows():
                w.writerow([_fmt(r[i]) for i in keep])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, default=_json_default) + "\n")

    def fingerprint(self) -> str:
        """Hash of the report with every wall-time field removed."""
        d = _strip_wall_time(self.to_dict())
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=_json_default).encode()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, ParameterKind):
        return o.value
    raise TypeError(type(o))


def _strip_wall_time(d):
    if isinstance(d, dict):
        return {k: _strip_wall_time(v) for k, v in d.items() if k not in ("wall_time", "wall_time_s")}
    if isinstance(d, list):
        return [_strip_wall_time(v) for v in d]
    return d


def _reference_for(config: CaseConfig, row: CaseRow) -> ReferenceTrace:
    problem = config.problem(row)
    target = config.sigma_obs / 10.0 if config.sigma_obs > 0 else 1e-3
    return solve_reference(nondimensionalize(problem, config.scales), config.schedule().instants, target,
                           x_obs_star=config.x_obs / config.L)


def _run_sample(config: CaseConfig, row_index: int, reference: ReferenceTrace, s: int,
                models: tuple[str, ...]) -> list[tuple[str, dict]]:
    row = config.rows[row_index]
    problem = config.problem(row)
    p_real = problem.parameter(config.param)
    seed = derive_seed(config.base_seed, s)
    sample = generate_observation_sample(problem, p_real, config.schedule(), config.sigma_obs, seed,
                                         reference=reference)
    out = []
    for model in models:
        rec = {"sample": s, "seed": seed}
        try:
            res = estimate(problem, sample, config.options(model), p_apr=config.guess_factor * p_real, p_real=p_real)
            rec.update(res.to_dict())
        except Exception as exc:  # recorded per sample, never fatal for the study
            rec.update({"error": f"{type(exc).__name__}: {exc}"})
        out.append((model, rec))
    return out


def _sample_job(args):
    return args[1], args[3], _run_sample(*args)


def run_case_study(config: CaseConfig, models: Sequence[str] = ("DF", "RC"), *, jobs: int = 1,
                   progress: Callable[[str], None] | None = None,
                   references: dict[str, ReferenceTrace] | None = None) -> ReliabilityReport:
    """Run every (row, sample) pair; DF and RC see the same noisy sample.

    ``references`` may supply precomputed reference traces keyed by row label;
    missing rows are solved here.
    """
    models = tuple(m.upper() for m in models)
    for m in models:
        if m not in ("DF", "RC"):
            raise ValueError(f"unknown model {m!r}")
    given = dict(references or {})
    references = {}
    tasks = []
    for i, row in enumerate(config.rows):
        ref = given.get(row.label) or _reference_for(config, row)
        references[row.label] = ref
        if progress:
            progress(f"row {row.label}: reference ready (accuracy {ref.accuracy_estimate:.2e} K)")
        tasks += [(config, i, ref, s, models) for s in range(config.n_samples)]

    collected: dict[tuple[int, str], list[dict]] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sample_job, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_sample_job(t) for t in tasks]
    for row_index, s, recs in results:
        for model, rec in recs:
            collected.setdefault((row_index, model), []).append(rec)

    entries = []
    for i, row in enumerate(config.rows):
        p_real = config.problem(row).parameter(config.param)
        for model in models:
            recs = sorted(collected.get((i, model), []), key=lambda r: r["sample"])
            ok = [r for r in recs if "error" not in r]
            entries.append(ReportEntry(
                row=row, model=model, p_real=p_real, samples=recs,
                failures=len(recs) - len(ok),
                nonconverged=sum(1 for r in ok if not r["converged"]),
                ratio=summarize(r["ratio"] for r in ok) if ok else None,
                iterations=summarize(r["N_m"] for r in ok) if ok else None,
                wall_time=summarize(r["wall_time_s"] for r in ok) if ok else None,
            ))
            if progress and ok:
                progress(f"row {row.label} {model}: E[ratio]={entries[-1].ratio.mean:.4f} "
                         f"E[N_m]={entries[-1].iterations.mean:.2f} failures={entries[-1].failures}")
    return ReliabilityReport(config, models, entries, references)
