"""Acceptance criteria, each checked at its stated tolerance.

Every test prints one ``CRITERION n: PASS|FAIL`` line. Run with
``pytest tests/test_acceptance.py -v -s`` to see them inline.
"""

import csv
import dataclasses
import hashlib
import io
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import FAST_MATERIAL, constant_problem, fd_oracle_error, preset_reference, preset_references, \
    self_consistent_estimate
from heatident.forward import (RcDiscretization, UniformGrid, sample_at_observation, solve_df, solve_rc,
                               solve_reference)
from heatident.problem import MATERIALS, ParameterKind, celsius_to_kelvin, nondimensionalize, steady_state_temperature
from heatident.reliability import WALL_TIME_COLUMNS, case_presets, run_case_study

pytestmark = pytest.mark.acceptance

N_SAMPLES = 100
BASE_SEED = 1

TABLE2_RC = (0.89, 0.71, 0.63, 0.60, 0.57)
TABLE3_RC = (0.89, 0.68, 0.46, 0.36, 0.26)
TABLE4_RC = ((5.5, 0.3), (1.05, 0.05), (0.82, 0.05), (0.74, 0.05))


def report_line(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def study(case):
    cfg = dataclasses.replace(case_presets(case), n_samples=N_SAMPLES, base_seed=BASE_SEED)
    return run_case_study(cfg, references=preset_references(cfg.case))


@pytest.fixture(scope="module")
def table2():
    return study("A")


@pytest.fixture(scope="module")
def table3():
    return study("B")


@pytest.fixture(scope="module")
def table4():
    return study("C")


def ratio_means(report, model):
    return [report.entry(r.label, model).ratio.mean for r in report.config.rows]


def check_table(report, rc_targets):
    df = ratio_means(report, "DF")
    rc = ratio_means(report, "RC")
    df_ok = all(0.98 <= v <= 1.02 for v in df)
    rc_ok = all(abs(v - t) <= tol for v, (t, tol) in zip(rc, rc_targets))
    sigma_ok = all(0.0 < report.entry(r.label, m).ratio.std < 1.0 for r in report.config.rows for m in ("DF", "RC"))
    no_failures = report.failures == 0
    detail = (f"DF={np.round(df, 4).tolist()} RC={np.round(rc, 4).tolist()} "
              f"targets={[t for t, _ in rc_targets]} sigma_order_ok={sigma_ok} failures={report.failures}")
    return df_ok and rc_ok and sigma_ok and no_failures, detail, rc


def test_criterion_1_table2_heat_capacity(table2, capsys):
    ok, detail, rc = check_table(table2, [(t, 0.05) for t in TABLE2_RC])
    detail += f" (reciprocal of RC: {np.round(1 / np.asarray(rc), 3).tolist()})"
    report_line(capsys, 1, ok, detail)
    assert ok, detail


def test_criterion_2_table3_conductivity(table3, capsys):
    ok, detail, _ = check_table(table3, [(t, 0.05) for t in TABLE3_RC])
    report_line(capsys, 2, ok, detail)
    assert ok, detail


def test_criterion_3_table4_surface_coefficient(table4, capsys):
    ok, detail, _ = check_table(table4, TABLE4_RC)
    report_line(capsys, 3, ok, detail)
    assert ok, detail


def test_criterion_4_iteration_counts(table2, table3, table4, capsys):
    problems = []
    df_means = {}
    for rep in (table2, table3, table4):
        for r in rep.config.rows:
            n_df = rep.entry(r.label, "DF").iterations.mean
            df_means[(rep.config.case[0], r.label)] = round(n_df, 2)
            if not 4.0 <= n_df <= 10.0:
                problems.append(f"DF N_m {n_df:.2f} outside [4, 10] for {rep.config.case} {r.label}")
    for rep in (table2, table3):
        for label in ("3", "4", "5"):
            n_df = rep.entry(label, "DF").iterations.mean
            n_rc = rep.entry(label, "RC").iterations.mean
            if n_rc < n_df:
                problems.append(f"RC N_m {n_rc:.2f} < DF N_m {n_df:.2f} for {rep.config.case} {label}")
    t_df = np.mean([e.wall_time.mean for rep in (table2, table3, table4) for e in rep.entries if e.model == "DF"])
    t_rc = np.mean([e.wall_time.mean for rep in (table2, table3, table4) for e in rep.entries if e.model == "RC"])
    if not t_df > t_rc:
        problems.append(f"t_DF {t_df:.4f}s not above t_RC {t_rc:.4f}s")
    ok = not problems
    report_line(capsys, 4, ok, f"DF N_m={df_means} t_DF={t_df:.4f}s t_RC={t_rc:.4f}s {problems}")
    assert ok, problems


def test_criterion_5_sensitivity_oracles(capsys):
    start = time.perf_counter()
    worst = 0.0
    bad = []
    for model in ("DF", "RC"):
        for param in ParameterKind:
            for mid in MATERIALS:
                err = fd_oracle_error(model, param, mid)
                worst = max(worst, err)
                if not err < 1e-4:
                    bad.append((model, param.value, mid, err))
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 60.0
    report_line(capsys, 5, ok, f"30 combinations, worst relative L2 {worst:.2e}, {elapsed:.1f}s {bad}")
    assert ok, bad


def test_criterion_6_zero_noise_exactness(capsys):
    worst = 0.0
    bad = []
    for model in ("DF", "RC"):
        for param in ParameterKind:
            for mid in MATERIALS:
                res = self_consistent_estimate(model, param, mid)
                err = abs(res.ratio - 1.0)
                worst = max(worst, err)
                if not err < 1e-3:
                    bad.append((model, param.value, mid, err))
    ok = not bad
    report_line(capsys, 6, ok, f"worst relative error {worst:.2e} over 30 self-consistent estimations {bad}")
    assert ok, bad


def test_criterion_7_steady_state(capsys):
    p = constant_problem(material=FAST_MATERIAL, t_f=60 * 1.5e5 * 0.22 ** 2 // 360 * 360)
    exact = steady_state_temperature(p, 0.11, celsius_to_kelvin(20.0), celsius_to_kelvin(40.0))
    dp = nondimensionalize(p)
    df = solve_df(dp, UniformGrid.from_dimensional(p, dp), stride=100, L=p.L)
    err_df = abs(sample_at_observation(df, 0.11, [p.t_f])[0] - exact)
    err_rc = abs(solve_rc(p, RcDiscretization.for_problem(p)).T2[-1] - exact)
    err_ref = abs(solve_reference(dp, [0.0, p.t_f], 1e-4).values[-1] - exact)
    ok = err_df < 1e-3 and err_rc < 1e-2 and err_ref < 1e-3
    report_line(capsys, 7, ok, f"|DF|={err_df:.2e} K |RC|={err_rc:.2e} K |ref|={err_ref:.2e} K "
                               f"(exact {exact - 273.15:.4f} C)")
    assert ok


def test_criterion_8_df_accuracy(capsys):
    cfg = case_presets("A")
    p = cfg.problem(cfg.rows[2])
    ref = preset_reference("A_capacity", "3").values
    dp = nondimensionalize(p)

    def rel_l2(dx, dt):
        tr = solve_df(dp, UniformGrid.from_dimensional(p, dp, dx, dt), L=p.L)
        T = sample_at_observation(tr, 0.11, cfg.schedule().instants)
        return float(np.linalg.norm(T - ref) / np.linalg.norm(ref))

    err_preset = rel_l2(2.2e-3, 3.6)
    err_fine = rel_l2(1.1e-3, 0.9)  # dx halved, dt quartered: dt stays proportional to dx^2
    ok = err_preset < 1e-2 and err_fine < err_preset
    report_line(capsys, 8, ok, f"relative L2 preset grid {err_preset:.3e}, refined {err_fine:.3e}")
    assert ok


def _table_hash(path):
    rows = list(csv.reader(path.open(newline="")))
    keep = [i for i, h in enumerate(rows[0]) if h not in WALL_TIME_COLUMNS]
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows([[r[i] for i in keep] for r in rows])
    return hashlib.sha256(buf.getvalue().encode()).hexdigest()


def test_criterion_9_determinism(tmp_path, capsys):
    hashes = []
    for run in ("first", "second"):
        out = tmp_path / run
        proc = subprocess.run([sys.executable, "-m", "heatident", "study", "A", "--samples", "25", "--seed", "7",
                               "--quiet", "--out", str(out)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        hashes.append(_table_hash(out / "table.csv"))
    ok = hashes[0] == hashes[1]
    report_line(capsys, 9, ok, f"table hashes {hashes[0][:16]} / {hashes[1][:16]}")
    assert ok
