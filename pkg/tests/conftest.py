import functools

from heatident.forward import ReferenceTrace
from heatident.problem import MATERIALS, ForcingSignal, Material, WallProblem, celsius_to_kelvin
from heatident.reliability import _reference_for, case_presets

# c does not enter the steady state; a light material keeps 50 diffusive times short
FAST_MATERIAL = Material(99, 1.5e5, 1.0, "light brick")


def constant_problem(material_id=3, T_left_C=20.0, T_right_C=40.0, t_f=3600.0, h_L=15.0, h_R=5.0, material=None):
    return WallProblem(L=0.22, h_L=h_L, h_R=h_R, T0=celsius_to_kelvin(20.0),
                       forcing_L=ForcingSignal.constant(celsius_to_kelvin(T_left_C)),
                       forcing_R=ForcingSignal.constant(celsius_to_kelvin(T_right_C)),
                       t_f=t_f, material=material or MATERIALS[material_id])


@functools.lru_cache(maxsize=None)
def preset_reference(case: str, label: str) -> ReferenceTrace:
    """Reference trace of a preset row, solved once per test session."""
    cfg = case_presets(case)
    row = next(r for r in cfg.rows if r.label == label)
    return _reference_for(cfg, row)


def preset_references(case: str) -> dict:
    return {r.label: preset_reference(case, r.label) for r in case_presets(case).rows}


def fd_oracle_error(model: str, param, material_id: int, eps: float = 1e-6, problem=None) -> float:
    """Relative L2 gap between the discrete sensitivity and a central difference of the forward solver."""
    import dataclasses

    import numpy as np

    from heatident.forward import RcDiscretization, UniformGrid, sample_at_observation, solve_df, solve_rc
    from heatident.problem import ParameterKind, nondimensionalize
    from heatident.sensitivity import df_with_sensitivity, rc_with_sensitivity

    param = ParameterKind.parse(param)
    if problem is None:
        cfg = case_presets("A")
        problem = cfg.problem(cfg.rows[material_id - 1])
    if model == "DF":
        dp = nondimensionalize(problem)
        grid = UniformGrid.from_dimensional(problem, dp)
        field = {ParameterKind.HEAT_CAPACITY: "c_star", ParameterKind.CONDUCTIVITY: "k_star",
                 ParameterKind.SURFACE_COEFFICIENT_LEFT: "hL_star"}[param]
        p0 = getattr(dp, field)
        _, sens = df_with_sensitivity(dp, grid, param)
        j = (grid.n_x - 1) // 2

        def sensor(p):
            return solve_df(dataclasses.replace(dp, **{field: p}), grid).values[:, j]
    else:
        disc = RcDiscretization.for_problem(problem)
        p0 = problem.parameter(param)
        _, sens = rc_with_sensitivity(problem, disc, param)

        def sensor(p):
            return solve_rc(problem.with_parameter(param, p), disc).T2
    fd = (sensor(p0 * (1 + eps)) - sensor(p0 * (1 - eps))) / (2 * eps * p0)
    return float(np.linalg.norm(sens.values - fd) / np.linalg.norm(fd))


def self_consistent_estimate(model: str, param, material_id: int):
    """Estimate from noiseless data produced by the same model at the true value, starting at 0.1 of it."""
    from types import SimpleNamespace

    from heatident.estimation import estimate, evaluate_model

    cfg = case_presets("A")
    problem = cfg.problem(cfg.rows[material_id - 1])
    opts = replace_param(cfg.options(model), param)
    sched = cfg.schedule()
    values, _ = evaluate_model(problem, sched, opts)
    p_real = problem.parameter(opts.param)
    obs = SimpleNamespace(schedule=sched, values=values)
    return estimate(problem, obs, opts, p_apr=0.1 * p_real, p_real=p_real)


def replace_param(opts, param):
    import dataclasses

    from heatident.problem import ParameterKind
    return dataclasses.replace(opts, param=ParameterKind.parse(param))
