from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FAST_MATERIAL, constant_problem, preset_reference
from heatident.forward import (AlignmentError, InstabilityError, NodeTrace, RcDiscretization, ReferenceConvergenceError,
                               UniformGrid, apply_df_boundaries, df_step, level_indices, node_index,
                               rc_stability_limit, rc_system_matrices, sample_at_observation, scheme_lambda, solve_df,
                               solve_rc, solve_reference, write_trace_csv)
from heatident.problem import (MATERIALS, DEFAULT_T0, ForcingSignal, Material, celsius_to_kelvin, nondimensionalize,
                               steady_state_temperature)
from heatident.reliability import case_presets

SCHEDULE = np.arange(201) * 360.0



def preset_problem(row=2):
    cfg = case_presets("A")
    return cfg.problem(cfg.rows[row])


def df_sensor(problem, dx=2.2e-3, dt=3.6, schedule=SCHEDULE):
    dp = nondimensionalize(problem)
    grid = UniformGrid.from_dimensional(problem, dp, dx, dt)
    return sample_at_observation(solve_df(dp, grid, L=problem.L), problem.L / 2, schedule)


# --- Du Fort-Frankel update and boundaries --------------------------------

def test_df_step_lambda_one():
    out = df_step(1.0, [0.0, 4.0, 9.0, 2.0, 0.0], [0.0, 0.0, 7.0, 0.0, 0.0])
    assert out[2] == 3.0
    assert np.isnan(out[0]) and np.isnan(out[-1])


def test_df_step_preset_lambda():
    lam = Fraction(120, 121)  # 2 * Fo * 1e-3 / 1e-4 with Fo = 6/121
    expected = (2 * lam * Fraction(11, 10) + (1 - lam)) / (1 + lam)
    u_n = np.array([1.1, 1.1, 1.1, 1.1, 1.1])
    u_nm1 = np.array([1.0, 1.0, 1.0, 1.0, 1.0])
    out = df_step(float(lam), u_n, u_nm1)
    assert out[1:-1] == pytest.approx([float(expected)] * 3, rel=1e-15)
    assert float(lam) == pytest.approx(0.99174, abs=5e-6)


def test_preset_grid_lambda():
    p = preset_problem()
    dp = nondimensionalize(p)
    grid = UniformGrid.from_dimensional(p, dp)
    assert grid.n_x == 101 and grid.n_t == 20001
    assert grid.dx_star == pytest.approx(1e-2) and grid.dt_star == pytest.approx(1e-3)
    assert scheme_lambda(dp, grid) == pytest.approx(2 * 0.0495867768595 * 1e-3 / 1e-4, rel=1e-11)


@given(st.floats(1e-3, 1e3), st.floats(0.1, 10.0))
def test_df_step_constant_fixed_point(lam, C):
    out = df_step(lam, np.full(7, C), np.full(7, C))
    assert out[1:-1] == pytest.approx([C] * 5, rel=1e-14)


def test_df_step_shape_mismatch():
    with pytest.raises(ValueError):
        df_step(1.0, np.ones(5), np.ones(6))


def test_boundary_adiabatic_limit():
    u = np.array([np.nan, 1.3, 1.1, 1.0, np.nan])
    left, _ = apply_df_boundaries(1.0, 1.1, 0.0, 1.0, 0.01, u, 5.0, 1.0)
    assert left == pytest.approx((4 * 1.3 - 1.1) / 3, rel=1e-14)


def test_boundary_equilibrium_preserved():
    u = np.array([np.nan, 1.07, 1.07, 1.2, 1.2, np.nan])
    u[-2] = u[-3] = 0.95
    left, right = apply_df_boundaries(1.0, 1.1, 3.0, 1.0, 0.2, u, 1.07, 0.95)
    assert left == pytest.approx(1.07, rel=1e-14)
    assert right == pytest.approx(0.95, rel=1e-14)


def test_boundary_preset_grid_example():
    u = np.full(101, np.nan)
    u[1], u[2] = 1.05, 1.04
    left, _ = apply_df_boundaries(1.0, 1.1, 3.0, 1.0, 0.01, np.nan_to_num(u, nan=1.0), 1.10, 1.0)
    lhs = Fraction(3, 2) / Fraction(1, 100) + Fraction(33, 10)
    rhs = (4 * Fraction(105, 100) - Fraction(104, 100)) / Fraction(2, 100) + Fraction(33, 10) * Fraction(11, 10)
    assert left == pytest.approx(float(rhs / lhs), rel=1e-14)


def test_boundary_right_mirrors_left():
    rng = np.random.default_rng(3)
    u = 1 + 0.1 * rng.random(9)
    l1, r1 = apply_df_boundaries(1.3, 1.1, 2.0, 0.7, 0.125, u, 1.02, 0.98)
    l2, r2 = apply_df_boundaries(1.3, 1.1, 0.7, 2.0, 0.125, u[::-1], 0.98, 1.02)
    assert (l1, r1) == pytest.approx((r2, l2), rel=1e-15)


def test_grid_invariants():
    with pytest.raises(ValueError):
        UniformGrid(0.25, 1e-3, 4, 10)
    with pytest.raises(ValueError):
        UniformGrid(0.1, 1e-3, 10, 10)


# --- full solves ------------------------------------------------------------

@pytest.mark.parametrize("mid", list(MATERIALS))
def test_all_solvers_keep_equilibrium(mid):
    p = constant_problem(mid, 20.0, 20.0, t_f=7200.0)
    dp = nondimensionalize(p)
    trace = solve_df(dp, UniformGrid.from_dimensional(p, dp), L=p.L)
    assert np.allclose(trace.values * 273.15, p.T0, rtol=1e-14, atol=0)
    assert np.array_equal(trace.values[0], np.full(101, dp.u0))
    rc = solve_rc(p, RcDiscretization.for_problem(p))
    assert np.allclose(np.stack([rc.T1, rc.T2, rc.T3]), p.T0, rtol=1e-14, atol=0)
    if mid == 3:
        ref = solve_reference(dp, np.arange(21) * 360.0, 1e-3)
        assert ref.accuracy_estimate == 0.0
        assert np.allclose(ref.values, p.T0, rtol=1e-14, atol=0)


@pytest.fixture(scope="module")
def steady():
    # horizon 60 diffusive times c L^2 / k
    p = constant_problem(material=FAST_MATERIAL, t_f=60 * 1.5e5 * 0.22 ** 2 // 360 * 360)
    exact = steady_state_temperature(p, 0.11, celsius_to_kelvin(20.0), celsius_to_kelvin(40.0))
    return p, exact


def test_steady_state_oracle_example(steady):
    _, exact = steady
    assert exact - 273.15 == pytest.approx(27.26, abs=5e-3)


def test_df_reaches_steady_state(steady):
    p, exact = steady
    assert abs(df_sensor(p, schedule=[p.t_f])[-1] - exact) < 1e-3


def test_rc_reaches_steady_state(steady):
    p, exact = steady
    trace = solve_rc(p, RcDiscretization.for_problem(p))
    assert abs(trace.T2[-1] - exact) < 1e-2


@pytest.mark.slow
def test_reference_reaches_steady_state(steady):
    p, exact = steady
    ref = solve_reference(nondimensionalize(p), [0.0, p.t_f], 1e-4)
    assert abs(ref.values[-1] - exact) < 1e-3


def test_df_error_shrinks_under_refinement():
    p = preset_problem()
    ref = preset_reference("A_capacity", "3").values
    err_coarse = np.linalg.norm(df_sensor(p, dx=4.4e-3, dt=7.2) - ref)
    err_preset = np.linalg.norm(df_sensor(p) - ref)
    err_fine = np.linalg.norm(df_sensor(p, dx=1.1e-3, dt=0.9) - ref)
    assert err_fine < err_preset < err_coarse
    assert err_preset / np.linalg.norm(ref) < 1e-2


def test_rc_visibly_departs_from_reference():
    p = preset_problem()
    rc = solve_rc(p, RcDiscretization.for_problem(p))
    ref = preset_reference("A_capacity", "3").values
    assert np.max(np.abs(sample_at_observation(rc, None, SCHEDULE) - ref)) > 1.0


def test_rc_step_matches_matrix_form():
    p = preset_problem(0)
    disc = RcDiscretization.for_problem(p)
    tr = solve_rc(p, disc)
    T = np.stack([tr.T1, tr.T2, tr.T3], axis=1)
    for n in (0, 1, 57, 4000, 19999):
        m = rc_system_matrices(p, disc, tr.times[n + 1])
        assert m.A[1].tolist() == [0.0, 1.0, 0.0]
        expected = np.linalg.solve(m.A, m.B @ T[n] + m.Q)
        assert T[n + 1] == pytest.approx(expected, rel=1e-13)


def test_rc_stability_limit_examples():
    assert rc_stability_limit(MATERIALS[3], 0.11) == pytest.approx(9075.0)
    assert rc_stability_limit(MATERIALS[1], 0.11) == pytest.approx(6050.0)
    assert rc_stability_limit(Material(0, 1e6, 1e12), 0.11) < 1e-5


def test_rc_rejects_unstable_step():
    p = constant_problem(1)
    with pytest.raises(ValueError, match="stability"):
        solve_rc(p, RcDiscretization(0.11, 6051.0))


@settings(max_examples=40, deadline=None)
@given(mid=st.sampled_from(list(MATERIALS)), frac=st.floats(0.01, 1.0), TL=st.floats(-20, 60),
       TR=st.floats(-20, 60), hL=st.floats(0.0, 50.0))
def test_rc_discrete_maximum_principle(mid, frac, TL, TR, hL):
    m = MATERIALS[mid]
    dt = frac * rc_stability_limit(m, 0.11)
    p = constant_problem(mid, TL, TR, t_f=300 * dt, h_L=hL)
    tr = solve_rc(p, RcDiscretization(0.11, dt))
    bounds = [p.T0, celsius_to_kelvin(TL), celsius_to_kelvin(TR)]
    T = np.stack([tr.T1, tr.T2, tr.T3])
    assert T.min() >= min(bounds) - 1e-9 and T.max() <= max(bounds) + 1e-9


def test_non_finite_forcing_is_reported_as_instability():
    p = replace(constant_problem(), forcing_L=ForcingSignal.constant(float("nan")))
    dp = nondimensionalize(p)
    with pytest.raises(InstabilityError):
        solve_df(dp, UniformGrid.from_dimensional(p, dp))
    with pytest.raises(InstabilityError):
        solve_rc(p, RcDiscretization.for_problem(p))


# --- reference solver --------------------------------------------------------

@pytest.mark.slow
def test_reference_refinement_is_self_consistent():
    loose = preset_reference("A_capacity", "3")
    p = preset_problem()
    # preset references are solved to sigma_obs / 10 = 0.02 K; halve that target
    tight = solve_reference(nondimensionalize(p), SCHEDULE, 0.01)
    assert loose.accuracy_estimate < 0.02
    assert np.max(np.abs(tight.values - loose.values)) <= loose.accuracy_estimate


def test_reference_rejects_bad_inputs():
    dp = nondimensionalize(preset_problem())
    with pytest.raises(ValueError):
        solve_reference(dp, SCHEDULE, 0.0)
    with pytest.raises(ValueError):
        solve_reference(dp, SCHEDULE[::-1], 0.01)
    with pytest.raises(ReferenceConvergenceError):
        solve_reference(dp, SCHEDULE[:3], 1e-14, max_doublings=1)


# --- sampling and export ----------------------------------------------------

def test_sensor_indexing_examples():
    # 0-based indices; the midpoint is the 51st node and 360 s is the 101st level
    assert node_index(0.11, 0.22, 101) + 1 == 51
    assert level_indices([360.0], 3.6)[0] + 1 == 101
    with pytest.raises(AlignmentError):
        node_index(0.111, 0.22, 101)
    with pytest.raises(AlignmentError):
        node_index(0.3, 0.22, 101)
    with pytest.raises(AlignmentError):
        level_indices([361.0], 3.6)
    assert node_index(0.111, 0.22, 101, strict=False) == 50


def test_sampling_df_and_rc_traces():
    p = constant_problem(t_f=720.0)
    dp = nondimensionalize(p)
    trace = solve_df(dp, UniformGrid.from_dimensional(p, dp), stride=100, L=p.L)
    vals = sample_at_observation(trace, 0.11, [0.0, 360.0, 720.0])
    assert vals[0] == pytest.approx(p.T0)
    with pytest.raises(AlignmentError):
        sample_at_observation(trace, 0.11, [3.6])
    rc = solve_rc(p, RcDiscretization.for_problem(p))
    assert isinstance(rc, NodeTrace)
    assert np.array_equal(sample_at_observation(rc, None, [0.0, 720.0]), rc.T2[[0, 200]])
    with pytest.raises(AlignmentError):
        sample_at_observation(rc, None, [1080.0])


def test_trace_csv_format(tmp_path):
    path = tmp_path / "t.csv"
    write_trace_csv(path, [0.0, 360.0], {"T_K": np.array([293.15, 1 / 3])})
    lines = path.read_text().splitlines()
    assert lines[0] == "t_s,T_K"
    assert float(lines[2].split(",")[1]) == 1 / 3
    assert lines[1] == "0,293.14999999999998"
