"""Reading samples and configurations, and writing reports.

Samples are delimiter-separated text with a header row.  The non-probability
sample has columns ``y,<covariates...>`` and the reference sample
``d,<covariates...>``; covariates are matched between the two files by name,
so column order never matters.

Configurations are JSON objects.  Reports render to JSON (full precision),
CSV and a plain-text table (both at 6 significant digits).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .exceptions import ConfigError, DomainError, InternalError, ParseError, SchemaError
from .model import INSTRUMENT, SHARED, CovariateSchema, DesignInfo, DesignKind, Family, SampleA, SampleB

KNOWN_ESTIMATORS = ("NAIVE", "IPW", "REG", "AIPW", "EL", "REG2", "IPW2", "DR2")
DEFAULT_ESTIMATORS = ("NAIVE", "IPW", "REG", "AIPW")
DEFAULT_TOLERANCES = {"pml_tol": 1e-6, "max_iter": 500, "n_starts": 20, "root_tol": 1e-6}
SIG_DIGITS = 6


# ---------------------------------------------------------------------------
# delimited samples
# ---------------------------------------------------------------------------


def _read_table(path, lead: str, delimiter: str):
    """Header names after ``lead`` plus a float matrix; rows are numbered as file lines."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    while rows and not any(cell.strip() for cell in rows[-1]):
        rows.pop()
    if not rows:
        raise ParseError("empty file", row=1)
    header = [h.strip() for h in rows[0]]
    if lead not in header:
        raise ParseError(f"missing required column {lead!r} in {path.name}", row=1, col=lead)
    if any(not h for h in header):
        raise ParseError("blank column name in header", row=1, col=header.index("") + 1)
    if len(set(header)) != len(header):
        dup = sorted({h for h in header if header.count(h) > 1})
        raise ParseError(f"duplicate column names {dup}", row=1)
    if len(rows) < 2:
        raise ParseError(f"{path.name} has a header but no data rows", row=2)
    values = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", row=r)
        for c, cell in enumerate(row):
            text = cell.strip()
            if not text:
                raise ParseError("missing value", row=r, col=header[c])
            try:
                values[r - 2, c] = float(text)
            except ValueError:
                raise ParseError(f"non-numeric value {text!r}", row=r, col=header[c]) from None
            if not math.isfinite(values[r - 2, c]):
                raise ParseError(f"non-finite value {text!r}", row=r, col=header[c])
    j = header.index(lead)
    covariates = header[:j] + header[j + 1 :]
    X = np.delete(values, j, axis=1)
    return covariates, values[:, j], X


def _schema_for(columns: Sequence[str], roles: Optional[Mapping[str, str]]) -> CovariateSchema:
    if roles is None:
        return CovariateSchema(tuple(columns), tuple(SHARED for _ in columns))
    missing = set(columns) - set(roles)
    extra = set(roles) - set(columns)
    if missing or extra:
        diff = missing | extra
        raise SchemaError(
            f"covariate roles do not match the data columns: symmetric difference {sorted(diff)}", diff
        )
    return CovariateSchema(tuple(columns), tuple(roles[c] for c in columns))


def load_sample_a(path, roles: Optional[Mapping[str, str]] = None, family=Family.BERNOULLI, delimiter: str = ",") -> SampleA:
    """Non-probability sample with header ``y,<covariates...>``.

    ``roles`` maps each covariate name to ``"shared"`` or ``"instrument"``; all
    columns are shared when it is omitted.
    """
    columns, y, X = _read_table(path, "y", delimiter)
    family = Family.parse(family)
    if family is Family.BERNOULLI:
        bad = np.flatnonzero((y != 0) & (y != 1))
        if bad.size:
            raise DomainError(f"binary response required, got y={y[bad[0]]:g} at row {int(bad[0]) + 2}")
    return SampleA(X, y, _schema_for(columns, roles))


def load_sample_b(path, schema: CovariateSchema, design: Optional[DesignInfo] = None, delimiter: str = ",") -> SampleB:
    """Reference sample with header ``d,<covariates...>``, reordered to ``schema``'s columns."""
    columns, d, X = _read_table(path, "d", delimiter)
    diff = set(columns) ^ set(schema.names)
    if diff:
        raise SchemaError(f"sample B columns differ from sample A: symmetric difference {sorted(diff)}", diff)
    bad = np.flatnonzero(d <= 0)
    if bad.size:
        raise DomainError(f"survey weight must be positive, got d={d[bad[0]]:g} at row {int(bad[0]) + 2}")
    order = [columns.index(name) for name in schema.names]
    if design is not None and design.kind is DesignKind.SRSWOR and design.n != d.size:
        raise DomainError(f"design declares n={design.n} but sample B has {d.size} rows")
    return SampleB(X[:, order], d, schema, design)


def write_sample_a(path, sample: SampleA) -> None:
    _write(path, "y", sample.y, sample.X, sample.schema.names)


def write_sample_b(path, sample: SampleB) -> None:
    _write(path, "d", sample.d, sample.X, sample.schema.names)


def _write(path, lead, first, X, names):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([lead, *names])
        for v, row in zip(first, X):
            w.writerow([repr(float(v)), *(repr(float(x)) for x in row)])


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnalysisConfig:
    """Settings for a two-sample analysis.

    JSON layout::

        {"family": "bernoulli_logistic",
         "covariates": {"x1": "shared", "z": "instrument"},
         "estimators": ["IPW", "REG", "AIPW"],
         "level": 0.95,
         "design": {"kind": "srswor", "N": 20000, "n": 1000},
         "tolerances": {"pml_tol": 1e-6},
         "seed": 0,
         "allow_no_instrument": false}
    """

    roles: dict
    family: Family = Family.BERNOULLI
    estimators: tuple = DEFAULT_ESTIMATORS
    level: float = 0.95
    design: dict = field(default_factory=lambda: {"kind": "hajek"})
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    allow_no_instrument: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if not isinstance(self.roles, Mapping) or not self.roles:
            raise ConfigError("'covariates' must map every covariate name to a role")
        for name, role in self.roles.items():
            if role not in (SHARED, INSTRUMENT):
                raise ConfigError(f"covariate {name!r} has unknown role {role!r}")
        object.__setattr__(self, "roles", dict(self.roles))
        ests = tuple(str(e).upper() for e in self.estimators)
        if not ests:
            raise ConfigError("at least one estimator is required")
        unknown = [e for e in ests if e not in KNOWN_ESTIMATORS]
        if unknown:
            raise ConfigError(f"unknown estimator(s) {unknown}; choose from {list(KNOWN_ESTIMATORS)}")
        object.__setattr__(self, "estimators", ests)
        if not 0.0 < float(self.level) < 1.0:
            raise ConfigError("level must lie in (0, 1)")
        bad = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if bad:
            raise ConfigError(f"unknown tolerance keys {sorted(bad)}")
        if not any(r == INSTRUMENT for r in self.roles.values()) and not self.allow_no_instrument:
            raise ConfigError(
                "no instrument covariate declared; theta may not be identifiable "
                "(set allow_no_instrument to proceed anyway)"
            )
        kind = str(self.design.get("kind", "hajek")).lower()
        try:
            DesignKind(kind)
        except ValueError:
            raise ConfigError(f"unknown design kind {kind!r}") from None
        if kind == DesignKind.GENERAL_HT.value:
            raise ConfigError("general_ht designs need pairwise probabilities; use the Python API")

    @classmethod
    def from_dict(cls, data: Mapping) -> "AnalysisConfig":
        allowed = {"family", "covariates", "estimators", "level", "design", "tolerances", "seed", "allow_no_instrument"}
        extra = set(data) - allowed
        if extra:
            raise ConfigError(f"unknown configuration keys {sorted(extra)}")
        if "covariates" not in data:
            raise ConfigError("configuration needs a 'covariates' role map")
        kwargs = {k: data[k] for k in allowed - {"covariates"} if k in data}
        try:
            return cls(roles=data["covariates"], **kwargs)
        except DomainError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "AnalysisConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: configuration must be a JSON object")
        return cls.from_dict(data)

    def tolerance(self, key):
        return self.tolerances.get(key, DEFAULT_TOLERANCES[key])

    def canonical(self) -> dict:
        """Semantic content with defaults filled in; the basis of :meth:`digest`."""
        return {
            "family": self.family.value,
            "covariates": dict(sorted(self.roles.items())),
            "estimators": list(self.estimators),
            "level": float(self.level),
            "design": self._design_dict(),
            "tolerances": {k: self.tolerance(k) for k in sorted(DEFAULT_TOLERANCES)},
            "seed": int(self.seed),
            "allow_no_instrument": bool(self.allow_no_instrument),
        }

    def _design_dict(self) -> dict:
        out = {"kind": str(self.design.get("kind", "hajek")).lower()}
        for key in ("N", "n"):
            if self.design.get(key) is not None:
                out[key] = int(self.design[key])
        return out

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def design_info(self, n_b: Optional[int] = None) -> DesignInfo:
        spec = self._design_dict()
        kind = DesignKind(spec["kind"])
        if kind is DesignKind.SRSWOR:
            N = spec.get("N")
            n = spec.get("n", n_b)
            if N is None or n is None:
                raise ConfigError("an srswor design needs the population size N")
            return DesignInfo.srswor(n, N)
        return DesignInfo(kind, N=spec.get("N"), n=spec.get("n"))

    def with_estimators(self, estimators: Sequence[str]) -> "AnalysisConfig":
        data = self.canonical()
        data["estimators"] = list(estimators)
        return AnalysisConfig.from_dict(data)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class EstimateRow:
    kind: str
    estimate: float
    se: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class ParameterRow:
    name: str
    estimate: float
    se: Optional[float] = None


@dataclass
class Report:
    rows: list
    level: float = 0.95
    theta: list = field(default_factory=list)
    xi: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "Report":
        return cls(
            rows=[EstimateRow(**r) for r in data["rows"]],
            level=data.get("level", 0.95),
            theta=[ParameterRow(**p) for p in data.get("theta", [])],
            xi=[ParameterRow(**p) for p in data.get("xi", [])],
            warnings=list(data.get("warnings", [])),
            provenance=dict(data.get("provenance", {})),
        )

    def row(self, kind: str) -> EstimateRow:
        for r in self.rows:
            if r.kind == kind:
                return r
        raise KeyError(kind)


def _check_finite(obj, where="report"):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise InternalError(f"non-finite value {obj!r} reached emission at {where}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _check_finite(v, f"{where}[{i}]")


def _num(x) -> str:
    return "" if x is None else f"{x:.{SIG_DIGITS}g}"


def _diag_text(diag: Mapping) -> str:
    return ";".join(f"{k}={_num(v) if isinstance(v, float) else v}" for k, v in sorted(diag.items()))


ROW_COLUMNS = ("kind", "estimate", "se", "ci_low", "ci_high")


def _row_cells(r: EstimateRow):
    return [r.kind, _num(r.estimate), _num(r.se), _num(r.ci_low), _num(r.ci_high), _diag_text(r.diagnostics)]


def _render_csv(report: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["section", "name", "estimate", "se", "ci_low", "ci_high", "diagnostics"])
    for r in report.rows:
        w.writerow(["estimate", *_row_cells(r)])
    for section, params in (("theta", report.theta), ("xi", report.xi)):
        for p in params:
            w.writerow([section, p.name, _num(p.estimate), _num(p.se), "", "", ""])
    return buf.getvalue()


def _table(header, body) -> list:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *body)]
    fmt = lambda cells: "  ".join(str(c).rjust(w) for c, w in zip(cells, widths)).rstrip()
    return [fmt(header), fmt(["-" * w for w in widths]), *(fmt(b) for b in body)]


def _render_text(report: Report) -> str:
    lines = [f"Population mean estimates ({_num(100 * report.level)}% Wald intervals)"]
    body = [[c if c else "-" for c in _row_cells(r)[:5]] for r in report.rows]
    lines += _table(list(ROW_COLUMNS), body)
    for title, params in (("Participation model", report.theta), ("Outcome model", report.xi)):
        if params:
            lines += ["", title]
            lines += _table(["name", "estimate", "se"], [[p.name, _num(p.estimate), _num(p.se) or "-"] for p in params])
    notes = [f"{r.kind}: {_diag_text(r.diagnostics)}" for r in report.rows if r.diagnostics]
    if notes:
        lines += ["", "Diagnostics", *notes]
    if report.warnings:
        lines += ["", "Warnings", *(f"- {w}" for w in report.warnings)]
    if report.provenance:
        lines += ["", "Provenance"]
        lines += [f"{k}: {v}" for k, v in sorted(report.provenance.items()) if not isinstance(v, dict)]
        for k, v in sorted(report.provenance.items()):
            if isinstance(v, dict):
                lines += [f"{k}.{kk}: {vv}" for kk, vv in sorted(v.items())]
    return "\n".join(lines) + "\n"


FORMATS = ("json", "csv", "text")


def emit_report(report: Report, fmt: str = "json") -> bytes:
    """Serialise a report; non-finite numbers are refused with :class:`InternalError`."""
    data = report.to_dict()
    _check_finite(data)
    if fmt == "json":
        return (json.dumps(data, indent=2, allow_nan=False) + "\n").encode()
    if fmt == "csv":
        return _render_csv(report).encode()
    if fmt == "text":
        return _render_text(report).encode()
    raise ValueError(f"unknown report format {fmt!r}; choose from {FORMATS}")


def parse_report(blob: bytes) -> Report:
    return Report.from_dict(json.loads(blob))
