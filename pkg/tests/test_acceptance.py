"""Acceptance checks for the four-population simulation study.

Each test prints one ``PASS``/``FAIL`` line for its criterion.  The Monte-Carlo
criteria use the full desk-scale setting (N = 20,000, 500 replications per
cell).  Tolerances are pinned below; they are never loosened after looking at
results.

Run them on their own with ``pytest tests/test_acceptance.py -v -s``.
"""

import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from npsurvey.io import parse_report
from npsurvey.simulation import STUDY_POPULATIONS, PopulationSpec, StudyConfig, alpha_for, generate_population, run_study

ROOT = Path(__file__).resolve().parents[1]
FIXTURE_DIR = ROOT / "src" / "npsurvey" / "data" / "espacov_synthetic"
WORKERS = os.cpu_count() or 1
REPS = 500
GAMMAS = (0.8, -0.8)
SIZES = ((500, 1000), (500, 2000), (2000, 1000), (2000, 2000))

# ---- pinned targets and tolerances -------------------------------------------------
MEAN_TOL = 0.02
PL_RB_MAX, PL_RB_GAMMA_MAX = 5.0, 8.0
PL_RRMSE = {"alpha": 0.09, "beta1": 0.15, "beta2": 0.09, "gamma": 0.51}
PL_RRMSE_TOL = 0.05
NMR_RANGE = (420, 480)
NAIVE_RANGE, IPW2_RANGE = (-55.0, -46.0), (-27.0, -17.0)
PROPOSED_RB_MAX = 4.0
BIASED = ("NAIVE", "REG2", "IPW2", "DR2")
SE_SD_TOL = 0.15
SE_TARGET = {"REG": 0.054, "IPW": 0.066, "AIPW": 0.057}
SE_TOL = 0.01
CP_TARGET = {
    (2000, 1000, 0.8): {"REG": 94.2, "IPW": 94.0, "AIPW": 94.4},
    (2000, 2000, 0.8): {"REG": 92.8, "IPW": 94.4, "AIPW": 94.2},
    (2000, 1000, -0.8): {"REG": 95.0, "IPW": 95.4, "AIPW": 94.6},
    (2000, 2000, -0.8): {"REG": 94.4, "IPW": 94.0, "AIPW": 94.4},
}
CP_TOL = 2.5
CP_SMALL_RANGE = (88.0, 95.0)
PROPERTY_BUDGET_S = 60.0


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line past pytest's output capture, then assert."""

    def emit(criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return emit


_CACHE = {}


def cell(ena, n_b, gamma, calibration=False):
    key = (ena, n_b, gamma, calibration)
    if key not in _CACHE:
        spec = PopulationSpec(alpha_for(ena, gamma), gamma)
        config = StudyConfig(spec, n_b=n_b, reps=REPS, workers=WORKERS, calibration=calibration)
        _CACHE[key] = run_study(config)
    return _CACHE[key]


def pct(table, kind):
    return table.estimators[kind]["pct_rb"]


def test_criterion_1_population_means(report):
    got = {}
    for alpha, gamma in sorted(STUDY_POPULATIONS):
        got[(alpha, gamma)] = generate_population(PopulationSpec(alpha, gamma)).mu0
    ok = all(abs(got[k] - STUDY_POPULATIONS[k][1]) <= MEAN_TOL for k in got)
    detail = ", ".join(f"({a:g},{g:+g}) {got[(a, g)]:.4f} vs {STUDY_POPULATIONS[(a, g)][1]}" for a, g in got)
    report(1, ok, f"population means within {MEAN_TOL}: {detail}")


def test_criterion_2_parameter_recovery(report):
    pl = cell(2000, 2000, 0.8).theta_pl
    rb_ok = all(abs(pl[n]["pct_rb"]) <= PL_RB_MAX for n in ("alpha", "beta1", "beta2"))
    rb_ok = rb_ok and abs(pl["gamma"]["pct_rb"]) <= PL_RB_GAMMA_MAX
    rr_ok = all(abs(pl[n]["rrmse"] - t) <= PL_RRMSE_TOL for n, t in PL_RRMSE.items())
    nmr = cell(500, 1000, 0.8, calibration=True).nmr_cal
    nmr_ok = NMR_RANGE[0] <= nmr <= NMR_RANGE[1]
    detail = "; ".join(f"{n} %RB {pl[n]['pct_rb']:.2f} RRMSE {pl[n]['rrmse']:.3f}" for n in PL_RRMSE)
    report(2, rb_ok and rr_ok and nmr_ok, f"PL at (2000,2000,+0.8): {detail}; calibration NMR {nmr}/{REPS}")


def test_criterion_3_bias_structure(report):
    pos = cell(500, 1000, 0.8)
    naive, ipw2 = pct(pos, "NAIVE"), pct(pos, "IPW2")
    ok = NAIVE_RANGE[0] <= naive <= NAIVE_RANGE[1] and IPW2_RANGE[0] <= ipw2 <= IPW2_RANGE[1]
    proposed = {k: pct(pos, k) for k in ("REG", "IPW", "AIPW")}
    ok = ok and all(abs(v) <= PROPOSED_RB_MAX for v in proposed.values())
    flips = []
    for ena, n_b in SIZES:
        up, down = cell(ena, n_b, 0.8), cell(ena, n_b, -0.8)
        flips.extend(pct(up, k) < 0 < pct(down, k) for k in BIASED)
    ok = ok and all(flips)
    detail = ", ".join(f"{k} {v:.2f}" for k, v in proposed.items())
    report(3, ok, f"naive {naive:.2f}, IPW2 {ipw2:.2f}, {detail}; sign flips {sum(flips)}/{len(flips)}")


def test_criterion_4_variance_calibration(report):
    parts, ok = [], True
    for gamma in GAMMAS:
        table = cell(2000, 2000, gamma)
        for kind in ("REG", "IPW", "AIPW"):
            row = table.estimators[kind]
            ratio = row["se"] / row["sd"]
            ok = ok and abs(ratio - 1) <= SE_SD_TOL
            if gamma > 0:
                ok = ok and abs(row["se"] - SE_TARGET[kind]) <= SE_TOL
            parts.append(f"{gamma:+g} {kind} SE {row['se']:.4f} SE/SD {ratio:.3f}")
    report(4, ok, "; ".join(parts))


def test_criterion_5_coverage(report):
    parts, ok = [], True
    for gamma in GAMMAS:
        for ena, n_b in SIZES:
            table = cell(ena, n_b, gamma)
            for kind in ("REG", "IPW", "AIPW"):
                cp = 100.0 * table.estimators[kind]["cp"]
                if ena == 2000:
                    target = CP_TARGET[(ena, n_b, gamma)][kind]
                    good = abs(cp - target) <= CP_TOL
                    parts.append(f"({ena},{n_b},{gamma:+g}) {kind} {cp:.1f} vs {target}{'' if good else ' X'}")
                else:
                    good = CP_SMALL_RANGE[0] <= cp <= CP_SMALL_RANGE[1]
                    parts.append(f"({ena},{n_b},{gamma:+g}) {kind} {cp:.1f}{'' if good else ' X'}")
                ok = ok and good
    report(5, ok, "; ".join(parts))


def test_criterion_6_property_suites(report):
    suites = [str(ROOT / "tests" / f) for f in
              ("test_model.py", "test_fitting.py", "test_estimators.py", "test_variance.py", "test_simulation.py")]
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *suites],
                          capture_output=True, text=True, cwd=ROOT)
    elapsed = time.perf_counter() - start
    ok = proc.returncode == 0 and elapsed < PROPERTY_BUDGET_S
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    report(6, ok, f"{summary} ({elapsed:.1f}s, budget {PROPERTY_BUDGET_S:g}s)")


def test_criterion_7_cli_end_to_end(tmp_path, report):
    cli = [sys.executable, "-m", "npsurvey.cli"]
    out = tmp_path / "report.json"
    analyze = subprocess.run(
        [*cli, "analyze", "--sample-a", str(FIXTURE_DIR / "sample_a.csv"),
         "--sample-b", str(FIXTURE_DIR / "sample_b.csv"), "--config", str(FIXTURE_DIR / "config.json"),
         "--out", str(out)],
        capture_output=True, text=True,
    )
    ok = analyze.returncode == 0
    if ok:
        rep = parse_report(out.read_bytes())
        ok = [r.kind for r in rep.rows] == ["NAIVE", "IPW", "REG", "AIPW"]
        ok = ok and all(np.isfinite(r.estimate) for r in rep.rows)
        ok = ok and all(r.ci_low <= r.estimate <= r.ci_high for r in rep.rows if r.se is not None)
        ok = ok and len(rep.provenance.get("config_hash", "")) == 64

    sim_cfg = tmp_path / "sim.json"
    sim_cfg.write_text(json.dumps({"cells": [{"expected_n_a": 500, "n_b": 1000, "gamma": 0.8}], "reps": 2}))
    sim_out = tmp_path / "sim"
    simulate = subprocess.run([*cli, "simulate", "--config", str(sim_cfg), "--out", str(sim_out)],
                              capture_output=True, text=True)
    sim_ok = simulate.returncode == 0
    if sim_ok:
        metrics = json.loads((sim_out / "cell_500_1000_+0.8.json").read_text())
        sim_ok = metrics["reps"] == 2 and {"REG", "IPW", "AIPW"} <= set(metrics["estimators"])
        sim_ok = sim_ok and (sim_out / "combined.csv").exists() and (sim_out / "combined.txt").exists()
    report(7, ok and sim_ok, f"analyze exit {analyze.returncode}, simulate exit {simulate.returncode}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
