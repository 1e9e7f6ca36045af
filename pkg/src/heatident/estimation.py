"""Scalar parameter identification by Gauss iterations on a least-squares cost."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .forward import RcDiscretization, UniformGrid, level_indices, node_index
from .problem import ParameterKind, ReferenceScales, WallProblem, nondimensionalize
from .sensitivity import df_with_sensitivity, rc_with_sensitivity

MODELS = ("DF", "RC")


class NonIdentifiableError(ArithmeticError):
    """The sensitivity vanishes on the whole schedule, so the update is undefined."""


@dataclass(frozen=True)
class ObservationSchedule:
    x_obs: float  # m
    instants: np.ndarray  # s

    def __post_init__(self):
        t = np.asarray(self.instants, dtype=float)
        object.__setattr__(self, "instants", t)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("schedule needs at least two instants")
        if np.any(np.diff(t) <= 0) or t[0] < 0:
            raise ValueError("observation instants must be strictly increasing and non-negative")

    @property
    def K(self) -> int:
        return int(self.instants.size)

    @classmethod
    def uniform(cls, x_obs: float, step: float, count: int) -> "ObservationSchedule":
        return cls(x_obs, np.arange(count) * step)


@dataclass(frozen=True)
class EstimationOptions:
    model: str = "DF"
    param: ParameterKind = ParameterKind.HEAT_CAPACITY
    eta1: float = 1e-6
    eta2: float = 1e-6
    max_iterations: int = 100
    dt: float = 3.6  # s, both models
    dx: float = 2.2e-3  # m, DF only
    scales: ReferenceScales = field(default_factory=ReferenceScales)
    # divide residuals and sensitivities by T_ref before the update
    dimensionless_residuals: bool = False

    def __post_init__(self):
        object.__setattr__(self, "model", self.model.upper())
        object.__setattr__(self, "param", ParameterKind.parse(self.param))
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if not (self.eta1 > 0 and self.eta2 > 0):
            raise ValueError("stopping thresholds must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(frozen=True)
class IterationRecord:
    m: int
    p: float
    J: float
    gamma1: float
    gamma2: float


@dataclass
class EstimationResult:
    p_est: float
    p_apr: float
    N_m: int
    converged: bool
    history: list[IterationRecord]
    wall_time: float
    J_apr: float = math.nan
    p_real: float | None = None

    @property
    def ratio(self) -> float | None:
        return None if self.p_real is None else self.p_est / self.p_real

    def to_dict(self, *, include_history: bool = True) -> dict:
        out = {"p_est": self.p_est, "p_apr": self.p_apr, "p_real": self.p_real, "ratio": self.ratio,
               "N_m": self.N_m, "converged": self.converged, "wall_time_s": self.wall_time}
        if include_history:
            out["history"] = [asdict(h) for h in self.history]
        return out


def cost(u_dir, u_obs) -> float:
    u_dir = np.asarray(u_dir, dtype=float)
    u_obs = np.asarray(u_obs, dtype=float)
    if u_dir.shape != u_obs.shape:
        raise ValueError(f"length mismatch: {u_dir.shape} vs {u_obs.shape}")
    r = u_dir - u_obs
    return float(np.mean(r * r))


def gauss_update(p_m: float, u_dir, u_obs, S) -> float:
    u_dir, u_obs, S = (np.asarray(a, dtype=float) for a in (u_dir, u_obs, S))
    if not (u_dir.shape == u_obs.shape == S.shape):
        raise ValueError("series lengths differ")
    denom = float(np.dot(S, S))
    if denom == 0.0:
        raise NonIdentifiableError("sensitivity is identically zero over the observation schedule")
    return float(p_m + np.dot(S, u_obs - u_dir) / denom)


def convergence_criteria(p_m: float, p_m1: float, res_norm_m: float, res_norm_m1: float) -> tuple[float, float]:
    if p_m == 0 or res_norm_m == 0:
        raise ZeroDivisionError("relative change undefined for a zero parameter or zero residual")
    return abs(p_m1 - p_m) / abs(p_m), abs(res_norm_m1 - res_norm_m) / res_norm_m


def evaluate_model(problem: WallProblem, schedule: ObservationSchedule, opts: EstimationOptions):
    """Sensor prediction (K) and its derivative w.r.t. the dimensional parameter."""
    if opts.model == "DF":
        dp = nondimensionalize(problem, opts.scales)
        grid = UniformGrid.from_dimensional(problem, dp, opts.dx, opts.dt)
        levels = level_indices(schedule.instants, opts.dt)
        if levels.max() > grid.n_t - 1:
            raise ValueError("observation schedule extends beyond the time horizon")
        stride = int(np.gcd.reduce(np.append(levels, grid.n_t - 1)))
        j = node_index(schedule.x_obs, problem.L, grid.n_x)
        trace, sens = df_with_sensitivity(dp, grid, opts.param, stride=stride, x_obs_star=j / (grid.n_x - 1))
        rows = levels // stride
        T_ref = opts.scales.T_ref
        u = trace.values[rows, j] * T_ref
        S = sens.values[rows] * T_ref / dp.parameter_scale(opts.param)
        return u, S
    disc = RcDiscretization.for_problem(problem, opts.dt)
    nodes, sens = rc_with_sensitivity(problem, disc, opts.param)
    levels = level_indices(schedule.instants, opts.dt)
    if levels.max() >= nodes.T2.size:
        raise ValueError("observation schedule extends beyond the time horizon")
    return nodes.T2[levels], sens.values[levels]


def estimate(problem: WallProblem, obs, opts: EstimationOptions, *, p_apr: float | None = None,
             p_real: float | None = None) -> EstimationResult:
    """Identify ``opts.param`` from ``obs`` (anything with ``schedule`` and ``values`` in K).

    The starting point defaults to one tenth of the value currently held by
    ``problem``. Updates are projected onto ``p >= 1e-3 * p_apr``.
    """
    start = time.perf_counter()
    schedule = obs.schedule
    u_obs = np.asarray(obs.values, dtype=float)
    if u_obs.shape != (schedule.K,):
        raise ValueError("observation values do not match the schedule")
    if p_apr is None:
        p_apr = 0.1 * problem.parameter(opts.param)
    if not p_apr > 0:
        raise ValueError("initial guess must be positive")
    if p_real is None:
        p_real = getattr(obs, "p_real", None)
    scale = 1.0 / opts.scales.T_ref if opts.dimensionless_residuals else 1.0
    floor = 1e-3 * p_apr
    # a fit this tight is exact up to round-off; relative changes of J are noise there
    J_exact = (1e-10 * float(np.sqrt(np.mean((u_obs * scale) ** 2)))) ** 2

    def evaluate(p):
        u, S = evaluate_model(problem.with_parameter(opts.param, p), schedule, opts)
        return u * scale, S * scale

    target = u_obs * scale
    p_m = float(p_apr)
    u_m, S_m = evaluate(p_m)
    J_m = cost(u_m, target)
    J_apr = J_m
    history: list[IterationRecord] = []
    converged = False
    for m in range(1, opts.max_iterations + 1):
        p_next = max(gauss_update(p_m, u_m, target, S_m), floor)
        u_next, S_next = evaluate(p_next)
        J_next = cost(u_next, target)
        if J_m <= J_exact:
            g1, g2 = abs(p_next - p_m) / abs(p_m), (0.0 if J_next <= J_exact else math.inf)
        else:
            g1, g2 = convergence_criteria(p_m, p_next, J_m, J_next)
        history.append(IterationRecord(m, p_next, J_next, g1, g2))
        p_m, u_m, S_m, J_m = p_next, u_next, S_next, J_next
        if g1 <= opts.eta1 and g2 <= opts.eta2:
            converged = True
            break
    return EstimationResult(p_m, float(p_apr), len(history), converged, history,
                            time.perf_counter() - start, J_apr, p_real)
