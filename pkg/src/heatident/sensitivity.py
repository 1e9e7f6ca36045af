"""Exact derivatives of the discrete DF and RC sensor traces with respect to c, k or h_L.

Both schemes are differentiated as written (discrete-then-differentiate), so the
results coincide with finite differences of the forward solvers up to O(eps^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import (FieldTrace, NodeTrace, RcDiscretization, UniformGrid, _run_df, _run_rc, node_index,
                      scheme_lambda)
from .problem import DimensionlessProblem, ParameterKind, WallProblem

__all__ = ["ParameterKind", "SensitivityTrace", "solve_sensitivity_df", "solve_sensitivity_rc",
           "df_with_sensitivity", "rc_with_sensitivity"]


@dataclass(frozen=True)
class SensitivityTrace:
    times: np.ndarray  # s
    values: np.ndarray
    model: str  # "DF" or "RC"
    param: ParameterKind


def _df_seeds(dp: DimensionlessProblem, grid: UniformGrid, param: ParameterKind):
    lam = scheme_lambda(dp, grid)
    if param is ParameterKind.HEAT_CAPACITY:
        return -lam / dp.c_star, 0.0, 0.0
    if param is ParameterKind.CONDUCTIVITY:
        return lam / dp.k_star, 1.0, 0.0
    return 0.0, 0.0, 1.0


def df_with_sensitivity(dp: DimensionlessProblem, grid: UniformGrid, param, *, stride: int = 1,
                        x_obs_star: float = 0.5) -> tuple[FieldTrace, SensitivityTrace]:
    """Forward DF field and the sensor sensitivity d u / d p* from one fused march."""
    param = ParameterKind.parse(param)
    dlam, dk, dhL = _df_seeds(dp, grid, param)
    times, levels, u, s = _run_df(dp, grid, stride, dlam, dk, dhL, with_sens=True)
    j = node_index(x_obs_star, 1.0, grid.n_x)
    t_s = times * dp.scales.t_ref
    field = FieldTrace(times, levels, u, grid, dp.scales.t_ref, dp.scales.T_ref)
    return field, SensitivityTrace(t_s, s[:, j].copy(), "DF", param)


def solve_sensitivity_df(dp: DimensionlessProblem, grid: UniformGrid, param, *, stride: int = 1,
                         x_obs_star: float = 0.5) -> SensitivityTrace:
    return df_with_sensitivity(dp, grid, param, stride=stride, x_obs_star=x_obs_star)[1]


def rc_with_sensitivity(problem: WallProblem, disc: RcDiscretization, param) -> tuple[NodeTrace, SensitivityTrace]:
    param = ParameterKind.parse(param)
    seeds = {ParameterKind.CONDUCTIVITY: (1.0, 0.0, 0.0), ParameterKind.HEAT_CAPACITY: (0.0, 1.0, 0.0),
             ParameterKind.SURFACE_COEFFICIENT_LEFT: (0.0, 0.0, 1.0)}[param]
    t, T, X = _run_rc(problem, disc, *seeds, with_sens=True)
    nodes = NodeTrace(t, T[:, 0].copy(), T[:, 1].copy(), T[:, 2].copy(), disc.dt)
    return nodes, SensitivityTrace(t, X[:, 1].copy(), "RC", param)


def solve_sensitivity_rc(problem: WallProblem, disc: RcDiscretization, param) -> SensitivityTrace:
    return rc_with_sensitivity(problem, disc, param)[1]
