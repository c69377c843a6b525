"""Command-line entry point: ``npsurvey analyze`` and ``npsurvey simulate``.

Exit codes: 0 on success, 1 for usage, configuration or I/O problems and 2
when estimation fails.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .analysis import run_analysis
from .exceptions import ConfigError, EstimationError, NpSurveyError
from .io import FORMATS, AnalysisConfig, emit_report, load_sample_a, load_sample_b
from .simulation import ALL_ESTIMATORS, STUDY_POPULATIONS, PopulationSpec, StudyConfig, alpha_for, run_study

EXIT_OK, EXIT_USAGE, EXIT_ESTIMATION = 0, 1, 2

log = logging.getLogger("npsurvey")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this contract reserves 2 for estimation failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_threads() -> int:
    raw = os.environ.get("NPSURVEY_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="npsurvey", description="Mean estimation from a nonignorable non-probability sample.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="estimate the population mean from two sample files")
    a.add_argument("--sample-a", required=True, type=Path, help="non-probability sample (header y,<covariates>)")
    a.add_argument("--sample-b", required=True, type=Path, help="reference sample (header d,<covariates>)")
    a.add_argument("--config", required=True, type=Path, help="JSON analysis configuration")
    a.add_argument("--out", required=True, type=Path, help="report path")
    a.add_argument("--estimators", help="comma-separated list overriding the config, e.g. naive,ipw")
    a.add_argument("--format", choices=FORMATS, help="report format (default: from the --out suffix, else json)")
    a.add_argument("--delimiter", default=",", help="field delimiter of both sample files")
    a.add_argument(
        "--allow-no-instrument", action="store_true", help="proceed even though no instrument column is declared"
    )

    s = sub.add_parser("simulate", help="run the Monte-Carlo study for configured cells")
    s.add_argument("--config", required=True, type=Path, help="JSON simulation configuration")
    s.add_argument("--out", required=True, type=Path, help="output directory")
    s.add_argument("--threads", type=int, default=None, help="worker processes (default: $NPSURVEY_THREADS or 1)")
    s.add_argument("--seed", type=int, default=None, help="override the population/replication seed")
    return parser


def _format_for(path: Path, explicit: Optional[str]) -> str:
    if explicit:
        return explicit
    return {".csv": "csv", ".txt": "text"}.get(path.suffix.lower(), "json")


def cmd_analyze(args) -> int:
    try:
        raw = json.loads(args.config.read_text())
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        if args.estimators:
            raw["estimators"] = [e.strip() for e in args.estimators.split(",") if e.strip()]
        if args.allow_no_instrument:
            raw["allow_no_instrument"] = True
        config = AnalysisConfig.from_dict(raw)
        sample_a = load_sample_a(args.sample_a, config.roles, config.family, delimiter=args.delimiter)
        sample_b = load_sample_b(args.sample_b, sample_a.schema, delimiter=args.delimiter)
        # an srswor design may leave n implicit; it is then the row count of the file
        design = config.design_info(sample_b.n)
        if design.n is not None and design.n != sample_b.n:
            raise ConfigError(f"design n={design.n} but {args.sample_b} has {sample_b.n} rows")
        sample_b = dataclasses.replace(sample_b, design=design)
    except (OSError, json.JSONDecodeError, NpSurveyError) as exc:
        print(f"npsurvey analyze: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        report = run_analysis(sample_a, sample_b, config)
    except EstimationError as exc:
        print(f"npsurvey analyze: estimation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION

    try:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_bytes(emit_report(report, _format_for(args.out, args.format)))
    except OSError as exc:
        print(f"npsurvey analyze: cannot write report: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for w in report.warnings:
        log.warning(w)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

SIM_KEYS = {"cells", "reps", "N", "seed", "estimators", "calibration", "n_starts", "level"}


def _cell_spec(cell: dict, N: int, seed: int):
    if not isinstance(cell, dict) or "gamma" not in cell or "n_b" not in cell:
        raise ConfigError(f"each cell needs 'gamma', 'n_b' and 'expected_n_a' or 'alpha': {cell!r}")
    gamma = float(cell["gamma"])
    if "alpha" in cell:
        alpha = float(cell["alpha"])
        label = f"a{alpha:g}"
    elif "expected_n_a" in cell:
        try:
            alpha = alpha_for(int(cell["expected_n_a"]), gamma)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
        label = str(int(cell["expected_n_a"]))
    else:
        raise ConfigError(f"cell {cell!r} needs 'expected_n_a' or 'alpha'")
    label = f"{label}_{int(cell['n_b'])}_{gamma:+g}"
    return PopulationSpec(alpha, gamma, N=N, seed=seed), int(cell["n_b"]), label


def load_simulation_config(path: Path, seed_override: Optional[int] = None) -> list:
    """``[(label, StudyConfig), ...]`` from a JSON simulation configuration."""
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError("simulation configuration must be a JSON object")
    extra = set(raw) - SIM_KEYS
    if extra:
        raise ConfigError(f"unknown simulation keys {sorted(extra)}")
    cells = raw.get("cells")
    if not cells:
        cells = [
            {"expected_n_a": ena, "n_b": nb, "gamma": g}
            for (_, g), (ena, _) in sorted(STUDY_POPULATIONS.items(), key=lambda kv: (-kv[0][1], kv[1][0]))
            for nb in (1000, 2000)
        ]
    N = int(raw.get("N", 20000))
    seed = int(seed_override if seed_override is not None else raw.get("seed", 20240501))
    estimators = tuple(str(e).upper() for e in raw.get("estimators", ALL_ESTIMATORS))
    out = []
    for cell in cells:
        spec, n_b, label = _cell_spec(cell, N, seed)
        try:
            study = StudyConfig(
                spec,
                n_b=n_b,
                reps=int(raw.get("reps", 500)),
                estimators=estimators,
                level=float(raw.get("level", 0.95)),
                calibration=bool(raw.get("calibration", True)),
                n_starts=int(raw.get("n_starts", 20)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        out.append((label, study))
    return out


COMBINED_COLUMNS = ("cell", "quantity", "method", "n_used", "pct_rb", "rrmse", "sd", "se", "cp", "al")


def _combined_rows(label: str, table) -> list:
    rows = []
    for kind, m in table.estimators.items():
        rows.append([label, kind, "", m["n_used"], m["pct_rb"], m["rrmse"], m["sd"], m["se"], m["cp"], m["al"]])
    for method, block in (("PL", table.theta_pl), ("CAL", table.theta_cal)):
        for name, m in block.items():
            rows.append([label, name, method, m["n_used"], m["pct_rb"], m["rrmse"], m["sd"], None, None, None])
    return rows


def _csv_cell(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def _text_table(rows) -> str:
    def fmt(v):
        if v is None or v == "":
            return "-"
        return f"{v:.4g}" if isinstance(v, float) else str(v)

    body = [[fmt(v) for v in r] for r in rows]
    widths = [max(len(c) for c in col) for col in zip(COMBINED_COLUMNS, *body)]
    line = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths)).rstrip()
    return "\n".join([line(COMBINED_COLUMNS), line(["-" * w for w in widths]), *(line(b) for b in body)]) + "\n"


def cmd_simulate(args) -> int:
    try:
        studies = load_simulation_config(args.config, args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
    except (OSError, NpSurveyError) as exc:
        print(f"npsurvey simulate: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    threads = args.threads if args.threads is not None else _default_threads()
    if threads < 1:
        print("npsurvey simulate: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE

    combined, nmr = [], []
    for label, study in studies:
        log.info("cell %s: %d replications on %d worker(s)", label, study.reps, threads)
        table = run_study(dataclasses.replace(study, workers=threads))
        payload = {"cell": label, **table.to_dict()}
        (args.out / f"cell_{label}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        combined.extend(_combined_rows(label, table))
        nmr.append((label, table.nmr_pl, table.nmr_cal))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMBINED_COLUMNS)
    for row in combined:
        w.writerow([_csv_cell(v) for v in row])
    (args.out / "combined.csv").write_text(buf.getvalue())
    text = _text_table(combined)
    text += "\nreplications without multiple roots (PL, CAL)\n"
    text += "".join(f"{label}: {pl}, {'-' if cal is None else cal}\n" for label, pl, cal in nmr)
    (args.out / "combined.txt").write_text(text)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "analyze":
        return cmd_analyze(args)
    return cmd_simulate(args)


if __name__ == "__main__":
    sys.exit(main())
