"""Direct models: Du Fort-Frankel field solver, three-node RC solver, and a
refined Crank-Nicolson solver used only to synthesise observations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .problem import DimensionlessProblem, Material, WallProblem


class InstabilityError(RuntimeError):
    pass


class AlignmentError(ValueError):
    """Raised when a sensor position or instant does not fall on the solver grid."""


class ReferenceConvergenceError(RuntimeError):
    pass


# --- grids ---------------------------------------------------------------

@dataclass(frozen=True)
class UniformGrid:
    dx_star: float
    dt_star: float
    n_x: int
    n_t: int

    def __post_init__(self):
        if self.n_x < 5:
            raise ValueError("need at least 5 nodes for the one-sided boundary stencils")
        if self.n_t < 2:
            raise ValueError("need at least two time levels")
        if not math.isclose(self.dx_star, 1.0 / (self.n_x - 1), rel_tol=1e-12):
            raise ValueError("dx_star must equal 1/(n_x - 1)")

    @classmethod
    def for_problem(cls, dp: DimensionlessProblem, n_x: int, dt_star: float) -> "UniformGrid":
        """Smallest grid with step ``dt_star`` whose last level reaches the horizon."""
        n_steps = math.ceil(dp.tf_star / dt_star - 1e-9)
        return cls(1.0 / (n_x - 1), dt_star, n_x, n_steps + 1)

    @classmethod
    def from_dimensional(cls, problem: WallProblem, dp: DimensionlessProblem,
                         dx: float = 2.2e-3, dt: float = 3.6) -> "UniformGrid":
        n_x = int(round(problem.L / dx)) + 1
        return cls.for_problem(dp, n_x, dt / dp.scales.t_ref)


def scheme_lambda(dp: DimensionlessProblem, grid: UniformGrid) -> float:
    return 2.0 * dp.Fo * (dp.k_star / dp.c_star) * grid.dt_star / grid.dx_star ** 2


# --- Du Fort-Frankel ----------------------------------------------------

@njit(cache=True)
def _df_interior(lam, u_n, u_nm1, out):
    inv = 1.0 / (1.0 + lam)
    for j in range(1, u_n.shape[0] - 1):
        out[j] = (lam * u_n[j + 1] + lam * u_n[j - 1] + (1.0 - lam) * u_nm1[j]) * inv


@njit(cache=True)
def _robin_left(k_star, Bi, h_star, dx, u2, u3, u_inf):
    denom = 3.0 * k_star / (2.0 * dx) + Bi * h_star
    return (k_star * (4.0 * u2 - u3) / (2.0 * dx) + Bi * h_star * u_inf) / denom


def df_step(lam: float, u_prev_level, u_prev_prev_level) -> np.ndarray:
    """Interior nodes of the next level; boundary entries are left as NaN."""
    u_n = np.asarray(u_prev_level, dtype=float)
    u_nm1 = np.asarray(u_prev_prev_level, dtype=float)
    if u_n.shape != u_nm1.shape:
        raise ValueError("levels must have the same number of nodes")
    out = np.full_like(u_n, np.nan)
    _df_interior(float(lam), u_n, u_nm1, out)
    return out


def apply_df_boundaries(k_star, Bi, hL_star, hR_star, dx_star, field, u_inf_L, u_inf_R) -> tuple[float, float]:
    """Boundary values solving the one-sided second-order Robin relations.

    ``field`` must already hold the interior of the new level.
    """
    u = np.asarray(field, dtype=float)
    assert 3.0 * k_star / (2.0 * dx_star) + Bi * hL_star > 0
    assert 3.0 * k_star / (2.0 * dx_star) + Bi * hR_star > 0
    left = _robin_left(k_star, Bi, hL_star, dx_star, u[1], u[2], u_inf_L)
    right = _robin_left(k_star, Bi, hR_star, dx_star, u[-2], u[-3], u_inf_R)
    return float(left), float(right)


@njit(cache=True)
def _df_march(lam, dlam, k_star, dk, Bi, hL, dhL, hR, dx, uinf_L, uinf_R, u0, n_x, n_t, stride, with_sens):
    """March the DF scheme; optionally carry the exact discrete derivative along.

    (dlam, dk, dhL) are derivatives of (lambda, k*, hL*) with respect to the
    parameter being differentiated.
    """
    n_saved = (n_t - 1) // stride + 1
    saved_u = np.empty((n_saved, n_x))
    saved_s = np.zeros((n_saved, n_x))
    u_nm1 = np.full(n_x, u0)
    u_n = np.full(n_x, u0)
    u_np1 = np.empty(n_x)
    s_nm1 = np.zeros(n_x)
    s_n = np.zeros(n_x)
    s_np1 = np.zeros(n_x)
    saved_u[0, :] = u_n
    inv = 1.0 / (1.0 + lam)
    two_dx = 2.0 * dx
    dL = 3.0 * k_star / two_dx + Bi * hL
    dR = 3.0 * k_star / two_dx + Bi * hR
    ok = True
    for n in range(0, n_t - 1):
        # level 1 is bootstrapped with u^{-1} := u^0
        for j in range(1, n_x - 1):
            a = u_n[j + 1] + u_n[j - 1]
            b = u_nm1[j]
            u_np1[j] = (lam * a + (1.0 - lam) * b) * inv
            if with_sens:
                s_np1[j] = (lam * (s_n[j + 1] + s_n[j - 1]) + (1.0 - lam) * s_nm1[j]) * inv \
                    + dlam * (a - b - u_np1[j]) * inv
        gl = 4.0 * u_np1[1] - u_np1[2]
        gr = 4.0 * u_np1[n_x - 2] - u_np1[n_x - 3]
        u_np1[0] = (k_star * gl / two_dx + Bi * hL * uinf_L[n + 1]) / dL
        u_np1[n_x - 1] = (k_star * gr / two_dx + Bi * hR * uinf_R[n + 1]) / dR
        if with_sens:
            sl = 4.0 * s_np1[1] - s_np1[2]
            sr = 4.0 * s_np1[n_x - 2] - s_np1[n_x - 3]
            s_np1[0] = (k_star * sl / two_dx + dk * gl / two_dx + Bi * dhL * uinf_L[n + 1]
                        - (3.0 * dk / two_dx + Bi * dhL) * u_np1[0]) / dL
            s_np1[n_x - 1] = (k_star * sr / two_dx + dk * gr / two_dx
                              - (3.0 * dk / two_dx) * u_np1[n_x - 1]) / dR
        if (n + 1) % stride == 0:
            i = (n + 1) // stride
            for j in range(n_x):
                saved_u[i, j] = u_np1[j]
                saved_s[i, j] = s_np1[j]
            if not (np.isfinite(u_np1[0]) and np.isfinite(u_np1[n_x // 2]) and np.isfinite(u_np1[n_x - 1])):
                ok = False
                break
        tmp = u_nm1
        u_nm1 = u_n
        u_n = u_np1
        u_np1 = tmp
        tmp = s_nm1
        s_nm1 = s_n
        s_n = s_np1
        s_np1 = tmp
    return saved_u, saved_s, ok


@dataclass(frozen=True)
class FieldTrace:
    """DF solution stored every ``stride`` levels.

    ``times`` are dimensionless; ``values[i, j]`` is u at stored level i, node j.
    """

    times: np.ndarray
    levels: np.ndarray
    values: np.ndarray
    grid: UniformGrid
    t_ref: float
    T_ref: float
    L: float | None = None


def _df_inputs(dp: DimensionlessProblem, grid: UniformGrid):
    if not dp.c_star > 0 or not dp.k_star > 0:
        raise ValueError("c* and k* must be positive")
    if grid.dt_star * (grid.n_t - 1) < dp.tf_star * (1 - 1e-12):
        raise ValueError("grid does not cover the time horizon")
    t = np.arange(grid.n_t) * grid.dt_star
    return t, np.asarray(dp.u_inf_L(t), dtype=float), np.asarray(dp.u_inf_R(t), dtype=float)


def _run_df(dp, grid, stride, dlam=0.0, dk=0.0, dhL=0.0, with_sens=False):
    if stride < 1 or (grid.n_t - 1) % stride:
        raise ValueError("stride must divide the number of steps")
    t, uL, uR = _df_inputs(dp, grid)
    lam = scheme_lambda(dp, grid)
    # march the deviation from u0: the scheme maps constants to themselves, and the
    # small deviation carries far less round-off than u itself (u0 is about 1.07)
    u, s, ok = _df_march(lam, dlam, dp.k_star, dk, dp.Bi, dp.hL_star, dhL, dp.hR_star, grid.dx_star,
                         uL - dp.u0, uR - dp.u0, 0.0, grid.n_x, grid.n_t, stride, with_sens)
    u += dp.u0
    if not ok or not np.all(np.isfinite(u)):
        bad = int(np.argmax(~np.isfinite(u).all(axis=1)))
        raise InstabilityError(f"DF march produced non-finite values near stored level {bad} (lambda={lam:.4g})")
    levels = np.arange(0, grid.n_t, stride)
    return t[levels], levels, u, s


def solve_df(dp: DimensionlessProblem, grid: UniformGrid, *, stride: int = 1, L: float | None = None) -> FieldTrace:
    times, levels, u, _ = _run_df(dp, grid, stride)
    return FieldTrace(times, levels, u, grid, dp.scales.t_ref, dp.scales.T_ref, L)


# --- lumped RC ----------------------------------------------------------

@dataclass(frozen=True)
class RcDiscretization:
    ell: float
    dt: float

    @classmethod
    def for_problem(cls, problem: WallProblem, dt: float = 3.6) -> "RcDiscretization":
        return cls(problem.L / 2.0, dt)


@dataclass(frozen=True)
class RcSystemMatrices:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray


@dataclass(frozen=True)
class NodeTrace:
    times: np.ndarray
    T1: np.ndarray
    T2: np.ndarray
    T3: np.ndarray
    dt: float

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.times.size)


def rc_stability_limit(material: Material, ell: float) -> float:
    return 0.5 * ell ** 2 * material.c / material.k


def rc_system_matrices(problem: WallProblem, disc: RcDiscretization, t_next: float) -> RcSystemMatrices:
    k, c, e, dt = problem.material.k, problem.material.c, disc.ell, disc.dt
    hL, hR = problem.h_L, problem.h_R
    a = k * dt / (c * e ** 2)
    A = np.array([[hL + k / e, -k / e, 0.0], [0.0, 1.0, 0.0], [0.0, -k / e, hR + k / e]])
    B = np.array([[0.0, 0.0, 0.0], [a, 1.0 - 2.0 * a, a], [0.0, 0.0, 0.0]])
    Q = np.array([hL * problem.forcing_L(t_next), 0.0, hR * problem.forcing_R(t_next)])
    return RcSystemMatrices(A, B, Q)


@njit(cache=True)
def _rc_march(k, c, ell, hL, hR, dt, TL, TR, T0, n_t, dk, dc, dhL, with_sens):
    T = np.empty((n_t, 3))
    X = np.zeros((n_t, 3))
    T[0, 0] = T0
    T[0, 1] = T0
    T[0, 2] = T0
    a = k * dt / (c * ell ** 2)
    # da/dp for p in {k, c}
    da = dk * dt / (c * ell ** 2) - dc * k * dt / (c * c * ell ** 2)
    g = k / ell
    dg = dk / ell
    for n in range(n_t - 1):
        lap = T[n, 2] - 2.0 * T[n, 1] + T[n, 0]
        t2 = T[n, 1] + a * lap
        t1 = (hL * TL[n + 1] + g * t2) / (hL + g)
        t3 = (hR * TR[n + 1] + g * t2) / (hR + g)
        T[n + 1, 0] = t1
        T[n + 1, 1] = t2
        T[n + 1, 2] = t3
        if with_sens:
            x2 = X[n, 1] + a * (X[n, 2] - 2.0 * X[n, 1] + X[n, 0]) + da * lap
            x1 = (g * x2 - (dhL + dg) * t1 + dg * t2 + dhL * TL[n + 1]) / (hL + g)
            x3 = (g * x2 - dg * (t3 - t2)) / (hR + g)
            X[n + 1, 0] = x1
            X[n + 1, 1] = x2
            X[n + 1, 2] = x3
    return T, X


def _run_rc(problem: WallProblem, disc: RcDiscretization, dk=0.0, dc=0.0, dhL=0.0, with_sens=False):
    limit = rc_stability_limit(problem.material, disc.ell)
    if disc.dt > limit:
        raise ValueError(f"RC time step {disc.dt} s exceeds the stability limit {limit:.6g} s")
    if disc.dt <= 0 or disc.ell <= 0:
        raise ValueError("RC step and half-thickness must be positive")
    n_steps = math.ceil(problem.t_f / disc.dt - 1e-9)
    t = np.arange(n_steps + 1) * disc.dt
    TL = np.asarray(problem.forcing_L(t), dtype=float)
    TR = np.asarray(problem.forcing_R(t), dtype=float)
    m = problem.material
    T, X = _rc_march(m.k, m.c, disc.ell, problem.h_L, problem.h_R, disc.dt, TL, TR, problem.T0,
                     t.size, dk, dc, dhL, with_sens)
    if not np.all(np.isfinite(T)):
        raise InstabilityError("RC march produced non-finite values")
    return t, T, X


def solve_rc(problem: WallProblem, disc: RcDiscretization) -> NodeTrace:
    t, T, _ = _run_rc(problem, disc)
    return NodeTrace(t, T[:, 0].copy(), T[:, 1].copy(), T[:, 2].copy(), disc.dt)


# --- Crank-Nicolson reference ------------------------------------------

@dataclass(frozen=True)
class ReferenceTrace:
    times: np.ndarray  # s
    values: np.ndarray  # K at the sensor
    accuracy_estimate: float  # K
    n_x: int = 0
    dt: float = 0.0


@njit(cache=True)
def _cn_march(w0, t_levels, uinf_L, uinf_R, coef, bl, br, obs_steps, out):
    """Crank-Nicolson for du/dt = coef*(D2 u) + Robin terms, deviation form w = u - u0.

    ``bl``/``br`` are the boundary exchange rates 2*Fo*Bi*h/(c* dx); ``coef`` is Fo*k*/(c* dx^2).
    Saves the whole field at the step indices listed in ``obs_steps``.
    """
    n = w0.shape[0]
    w = w0.copy()
    rhs = np.empty(n)
    cp = np.empty(n)
    dp_ = np.empty(n)
    sub = np.empty(n)
    diag = np.empty(n)
    sup = np.empty(n)
    k_obs = 0
    while k_obs < obs_steps.shape[0] and obs_steps[k_obs] == 0:
        out[k_obs, :] = w
        k_obs += 1
    for s in range(t_levels.shape[0] - 1):
        h = 0.5 * (t_levels[s + 1] - t_levels[s])
        fl = bl * 0.5 * (uinf_L[s] + uinf_L[s + 1])
        fr = br * 0.5 * (uinf_R[s] + uinf_R[s + 1])
        # explicit half
        rhs[0] = w[0] + h * (2.0 * coef * (w[1] - w[0]) - bl * w[0]) + 2.0 * h * fl
        for j in range(1, n - 1):
            rhs[j] = w[j] + h * coef * (w[j + 1] - 2.0 * w[j] + w[j - 1])
        rhs[n - 1] = w[n - 1] + h * (2.0 * coef * (w[n - 2] - w[n - 1]) - br * w[n - 1]) + 2.0 * h * fr
        # implicit half: (I - h M) w_new = rhs
        diag[0] = 1.0 + h * (2.0 * coef + bl)
        sup[0] = -2.0 * h * coef
        for j in range(1, n - 1):
            sub[j] = -h * coef
            diag[j] = 1.0 + 2.0 * h * coef
            sup[j] = -h * coef
        sub[n - 1] = -2.0 * h * coef
        diag[n - 1] = 1.0 + h * (2.0 * coef + br)
        cp[0] = sup[0] / diag[0]
        dp_[0] = rhs[0] / diag[0]
        for j in range(1, n):
            m = diag[j] - sub[j] * cp[j - 1]
            if j < n - 1:
                cp[j] = sup[j] / m
            dp_[j] = (rhs[j] - sub[j] * dp_[j - 1]) / m
        w[n - 1] = dp_[n - 1]
        for j in range(n - 2, -1, -1):
            w[j] = dp_[j] - cp[j] * w[j + 1]
        while k_obs < obs_steps.shape[0] and obs_steps[k_obs] == s + 1:
            out[k_obs, :] = w
            k_obs += 1
    return out


def _cn_solve(dp: DimensionlessProblem, schedule_star: np.ndarray, n_x: int, dt_star: float, x_star: float):
    """One CN pass; returns dimensionless sensor values at the schedule."""
    # integer number of sub-steps between consecutive requested instants
    marks = np.concatenate(([0.0], schedule_star))
    pieces = [np.array([0.0])]
    for a, b in zip(marks[:-1], marks[1:]):
        if b <= a:
            continue
        m = max(1, math.ceil((b - a) / dt_star - 1e-9))
        pieces.append(np.linspace(a, b, m + 1)[1:])
    t_levels = np.concatenate(pieces)
    obs_steps = np.searchsorted(t_levels, schedule_star)
    dx = 1.0 / (n_x - 1)
    coef = dp.Fo * dp.k_star / (dp.c_star * dx ** 2)
    bl = 2.0 * dp.Fo * dp.Bi * dp.hL_star / (dp.c_star * dx)
    br = 2.0 * dp.Fo * dp.Bi * dp.hR_star / (dp.c_star * dx)
    uL = np.asarray(dp.u_inf_L(t_levels), dtype=float) - dp.u0
    uR = np.asarray(dp.u_inf_R(t_levels), dtype=float) - dp.u0
    out = np.empty((schedule_star.size, n_x))
    _cn_march(np.zeros(n_x), t_levels, uL, uR, coef, bl, br, obs_steps.astype(np.int64), out)
    pos = x_star * (n_x - 1)
    j = min(int(math.floor(pos)), n_x - 2)
    frac = pos - j
    return (1.0 - frac) * out[:, j] + frac * out[:, j + 1]


def solve_reference(dp: DimensionlessProblem, schedule, accuracy_target: float, *, x_obs_star: float = 0.5,
                    base_dx_star: float = 0.01, base_dt: float = 3.6, max_doublings: int = 5) -> ReferenceTrace:
    """High-accuracy sensor trace by Crank-Nicolson with successive grid doubling.

    The first pass is 4x finer than (base_dx_star, base_dt) in both directions.
    Passes repeat until two successive ones agree to ``accuracy_target`` K at every
    instant; the reported values are the Richardson combination of the last two
    passes and ``accuracy_estimate`` is their max difference.
    """
    if not accuracy_target > 0:
        raise ValueError("accuracy target must be positive")
    times = np.asarray(schedule, dtype=float)
    if times.ndim != 1 or np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("schedule must be strictly increasing and non-negative")
    s_star = times / dp.scales.t_ref
    T_ref = dp.scales.T_ref
    n_x = 4 * int(round(1.0 / base_dx_star)) + 1
    dt_star = base_dt / 4.0 / dp.scales.t_ref
    prev = _cn_solve(dp, s_star, n_x, dt_star, x_obs_star)
    for _ in range(max_doublings):
        n_x = 2 * (n_x - 1) + 1
        dt_star /= 2.0
        cur = _cn_solve(dp, s_star, n_x, dt_star, x_obs_star)
        diff = float(np.max(np.abs(cur - prev))) * T_ref
        if diff < accuracy_target:
            w = cur + (cur - prev) / 3.0
            return ReferenceTrace(times, (w + dp.u0) * T_ref, diff, n_x, dt_star * dp.scales.t_ref)
        prev = cur
    raise ReferenceConvergenceError(
        f"reference refinement did not reach {accuracy_target} K after {max_doublings} doublings (last diff {diff:.3g} K)")


# --- sampling & export ------------------------------------------------

def node_index(x_obs: float, L: float, n_x: int, *, strict: bool = True) -> int:
    if not 0.0 <= x_obs <= L * (1 + 1e-12):
        raise AlignmentError(f"sensor position {x_obs} m outside [0, {L}]")
    pos = x_obs / L * (n_x - 1)
    j = int(round(pos))
    if strict and abs(pos - j) > 1e-6:
        raise AlignmentError(f"sensor position {x_obs} m does not fall on a grid node (dx = {L / (n_x - 1)} m)")
    return j


def level_indices(instants, dt: float, *, strict: bool = True) -> np.ndarray:
    pos = np.asarray(instants, dtype=float) / dt
    idx = np.rint(pos).astype(np.int64)
    if strict and np.any(np.abs(pos - idx) > 1e-6):
        raise AlignmentError(f"observation instants are not multiples of the solver step {dt} s")
    return idx


def sample_at_observation(trace: FieldTrace | NodeTrace, x_obs: float | None, schedule, *, L: float | None = None,
                          strict: bool = True) -> np.ndarray:
    """Sensor temperatures in K at the requested instants (seconds).

    DF traces use the grid node at ``x_obs``; RC traces always report T2.
    """
    if isinstance(trace, NodeTrace):
        idx = level_indices(schedule, trace.dt, strict=strict)
        if idx.max() >= trace.T2.size or idx.min() < 0:
            raise AlignmentError("observation instant beyond the solved horizon")
        return trace.T2[idx]
    L = L if L is not None else trace.L
    if L is None:
        raise ValueError("wall thickness is required to locate the sensor on a DF trace")
    j = node_index(x_obs, L, trace.grid.n_x, strict=strict)
    levels = level_indices(schedule, trace.grid.dt_star * trace.t_ref, strict=strict)
    rows = np.searchsorted(trace.levels, levels)
    if np.any(rows >= trace.levels.size) or np.any(trace.levels[np.minimum(rows, trace.levels.size - 1)] != levels):
        raise AlignmentError("observation instant not among the stored levels")
    return trace.values[rows, j] * trace.T_ref


def write_trace_csv(path, times_s, columns: dict[str, np.ndarray]) -> None:
    path = Path(path)
    names = ["t_s", *columns]
    data = np.column_stack([np.asarray(times_s, dtype=float), *[np.asarray(v, dtype=float) for v in columns.values()]])
    with path.open("w") as fh:
        fh.write(",".join(names) + "\n")
        for row in data:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def write_field_csv(path, trace: FieldTrace) -> None:
    cols = {f"node_{j}": trace.values[:, j] * trace.T_ref for j in range(trace.grid.n_x)}
    write_trace_csv(path, trace.times * trace.t_ref, cols)
