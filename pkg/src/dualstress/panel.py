"""Student-semester panel construction.

Raw enrollment records are joined with a monthly CPI series (compounded to
an annual inflation rate for each entry cohort) and a strike calendar
(lagged one to three academic semesters). Every feature of the row for
semester ``t`` is computed from records observed no later than ``t``; the
outcome describes ``t + 1``.

Calendar arithmetic uses an absolute semester position
``2 * calendar_year + semester_of_year - 1`` so that lags walk across year
boundaries: semester 1 of year ``y`` at lag 1 is semester 2 of ``y - 1``.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DomainError, IngestionError, SchemaError

ENROLLMENT_COLUMNS = [
    "student_id", "cohort_year", "semester_number", "calendar_year", "semester_of_year",
    "enrolled_next", "graduated_by_next", "cum_gpa", "repeat_ratio", "credits_approved_cum",
    "gender_code", "work_status",
]

LAG_COLUMNS = ["strikes_lag1", "strikes_lag2", "strikes_lag3"]

# h(W) for the lag logits; the DML layer adds inflation_at_entry.
CONTROL_COLUMNS = [
    "cum_gpa", "repeat_ratio", "credits_approved_cum", "semester_number", "calendar_year",
    "cohort_year", "gender_code", "work_status", "work_status_imputed",
]

PANEL_COLUMNS = [
    "student_id", "semester_number", "calendar_year", "semester_of_year", "cohort_year",
    "dropout_next_sem", *LAG_COLUMNS, "inflation_at_entry", "interaction_term",
    "cum_gpa", "repeat_ratio", "credits_approved_cum", "gender_code", "work_status",
    "work_status_imputed",
]

_INT_COLUMNS = ["cohort_year", "semester_number", "calendar_year", "semester_of_year", "gender_code"]
_FLOAT_COLUMNS = ["cum_gpa", "repeat_ratio", "credits_approved_cum"]
_BOOL_COLUMNS = ["enrolled_next", "graduated_by_next"]
_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


def calendar_position(calendar_year, semester_of_year):
    """Absolute academic-semester index; consecutive semesters differ by one."""
    return 2 * np.asarray(calendar_year, dtype=np.int64) + np.asarray(semester_of_year, dtype=np.int64) - 1


def position_to_semester(position):
    position = int(position)
    return position // 2, position % 2 + 1


# ---------------------------------------------------------------------------
# Macro inputs
# ---------------------------------------------------------------------------

def compound_annual_inflation(monthly_changes):
    """Compound twelve proportional monthly CPI changes into an annual rate.

    Returns ``prod(1 + m) - 1``. The product is accumulated as an exactly
    rounded sum of ``log1p`` terms, which makes the result independent of
    the order of the months and accurate for rates close to zero.
    """
    values = np.asarray(monthly_changes, dtype=float).ravel()
    if values.shape != (12,):
        raise SchemaError(f"expected 12 monthly CPI changes, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise DomainError("monthly CPI changes must be finite")
    if np.any(values <= -1.0):
        raise DomainError("monthly CPI change <= -1 would make the price level non-positive")
    return math.expm1(math.fsum(math.log1p(v) for v in values))


@dataclass(frozen=True)
class CpiMonthlySeries:
    """Proportional month-on-month CPI changes keyed by calendar year."""

    changes: dict

    def __post_init__(self):
        clean = {}
        for year, months in self.changes.items():
            months = tuple(float(v) for v in months)
            if len(months) != 12:
                raise SchemaError(f"CPI year {year} has {len(months)} monthly values, expected 12")
            if any(not math.isfinite(v) or v <= -1.0 for v in months):
                raise DomainError(f"CPI year {year} has a monthly change <= -1 or non-finite")
            clean[int(year)] = months
        object.__setattr__(self, "changes", dict(sorted(clean.items())))

    @property
    def years(self):
        return list(self.changes)

    def annual_rate(self, year):
        return compound_annual_inflation(self.changes[int(year)])

    def annual_rates(self):
        return {y: self.annual_rate(y) for y in self.changes}

    @classmethod
    def from_annual(cls, rates, seasonal_weights=None):
        """Monthly changes that compound exactly (to rounding) to ``rates``.

        ``seasonal_weights`` (12 positive numbers) distribute the annual
        log-growth across months; uniform by default.
        """
        w = np.ones(12) if seasonal_weights is None else np.asarray(seasonal_weights, dtype=float)
        w = 12.0 * w / w.sum()
        changes = {}
        for year, rate in rates.items():
            step = math.log1p(float(rate)) / 12.0
            changes[int(year)] = tuple(math.expm1(step * wi) for wi in w)
        return cls(changes)


@dataclass(frozen=True)
class StrikeCalendar:
    """Share of teaching days lost per ``(calendar_year, semester_of_year)``."""

    intensity: dict

    def __post_init__(self):
        clean = {}
        for key, value in self.intensity.items():
            year, sem = (int(k) for k in key)
            if sem not in (1, 2):
                raise SchemaError(f"semester_of_year must be 1 or 2, got {sem} for year {year}")
            value = float(value)
            if not (0.0 <= value <= 1.0):
                raise DomainError(f"strike intensity {value} outside [0, 1] at ({year}, {sem})")
            if (year, sem) in clean:
                raise IngestionError(f"duplicate strike calendar key ({year}, {sem})")
            clean[(year, sem)] = value
        object.__setattr__(self, "intensity", dict(sorted(clean.items())))

    def get(self, calendar_year, semester_of_year):
        return self.intensity.get((int(calendar_year), int(semester_of_year)), float("nan"))

    def by_position(self):
        return {2 * y + s - 1: v for (y, s), v in self.intensity.items()}

    @classmethod
    def constant(cls, years, value):
        return cls({(y, s): value for y in years for s in (1, 2)})


def build_lagged_strikes(calendar_year, semester_of_year, semester_number, calendar, k):
    """Strike intensity ``k`` academic semesters before the given semester.

    Returns NaN when the lagged semester precedes the student's entry
    (``semester_number - k < 1``) or the calendar's coverage.
    """
    if k < 1:
        raise ValueError("lag must be >= 1")
    if semester_number - k < 1:
        return float("nan")
    year, sem = position_to_semester(calendar_position(calendar_year, semester_of_year) - k)
    return calendar.get(year, sem)


# ---------------------------------------------------------------------------
# Record validation
# ---------------------------------------------------------------------------

def _parse_bool(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer, float, np.floating)) and value in (0, 1):
        return bool(value)
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(value)


def _is_missing(value):
    if value is None:
        return True
    if isinstance(value, str):
        return value.strip() == ""
    try:
        return bool(pd.isna(value))
    except (TypeError, ValueError):
        return False


def validate_records(records, source=None):
    """Type-check enrollment records and enforce their invariants.

    Returns a typed copy. ``source`` is the CSV path, used only to make
    error messages point at file and line.
    """
    missing = [c for c in ENROLLMENT_COLUMNS if c not in records.columns]
    if missing:
        raise SchemaError(f"missing enrollment columns: {', '.join(missing)}", file=source)
    raw = records[ENROLLMENT_COLUMNS].reset_index(drop=True)
    out = pd.DataFrame(index=raw.index)

    def fail(i, column, message, cls=SchemaError):
        line = i + 2 if source is not None else None
        if cls is SchemaError:
            raise SchemaError(message, file=source, line=line, column=column)
        where = f"line {line}" if line is not None else f"row {i}"
        raise cls(f"{message} ({where}, column={column})")

    ids = raw["student_id"]
    for i, v in enumerate(ids):
        if _is_missing(v):
            fail(i, "student_id", "missing student_id")
    out["student_id"] = ids.astype(str).str.strip()

    for col in _INT_COLUMNS:
        vals = np.empty(len(raw), dtype=np.int64)
        for i, v in enumerate(raw[col]):
            if _is_missing(v):
                fail(i, col, "missing value")
            try:
                f = float(v)
            except (TypeError, ValueError):
                fail(i, col, f"not a number: {v!r}")
            if not f.is_integer():
                fail(i, col, f"expected an integer, got {v!r}")
            vals[i] = int(f)
        out[col] = vals
    for col in _FLOAT_COLUMNS:
        vals = np.empty(len(raw))
        for i, v in enumerate(raw[col]):
            if _is_missing(v):
                fail(i, col, "missing value")
            try:
                vals[i] = float(v)
            except (TypeError, ValueError):
                fail(i, col, f"not a number: {v!r}")
            if not math.isfinite(vals[i]):
                fail(i, col, "non-finite value")
        out[col] = vals
    for col in _BOOL_COLUMNS:
        vals = np.empty(len(raw), dtype=bool)
        for i, v in enumerate(raw[col]):
            if _is_missing(v):
                fail(i, col, "missing value")
            try:
                vals[i] = _parse_bool(v)
            except ValueError:
                fail(i, col, f"not a boolean: {v!r}")
        out[col] = vals
    work = np.full(len(raw), np.nan)
    for i, v in enumerate(raw["work_status"]):
        if _is_missing(v):
            continue
        try:
            work[i] = float(_parse_bool(v))
        except ValueError:
            fail(i, "work_status", f"not a binary code: {v!r}")
    out["work_status"] = work

    checks = [
        ("semester_number", out["semester_number"] < 1, "semester_number must be >= 1"),
        ("cohort_year", out["cohort_year"] > out["calendar_year"], "cohort_year after calendar_year"),
        ("semester_of_year", ~out["semester_of_year"].isin([1, 2]), "semester_of_year must be 1 or 2"),
        ("repeat_ratio", (out["repeat_ratio"] < 0) | (out["repeat_ratio"] > 1), "repeat_ratio outside [0, 1]"),
        ("credits_approved_cum", out["credits_approved_cum"] < 0, "negative credits_approved_cum"),
        ("gender_code", ~out["gender_code"].isin([0, 1]), "gender_code must be 0 or 1"),
    ]
    for col, bad, message in checks:
        if bad.any():
            fail(int(np.flatnonzero(bad.to_numpy())[0]), col, message, DomainError)

    dup = out.duplicated(["student_id", "semester_number"], keep=False)
    if dup.any():
        pairs = sorted(set(zip(out.loc[dup, "student_id"], out.loc[dup, "semester_number"])))
        shown = ", ".join(f"({s}, {n})" for s, n in pairs[:10])
        raise IngestionError(f"duplicate (student_id, semester_number) keys: {shown}")
    return out


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

@dataclass
class AssemblyReport:
    n_input_rows: int
    n_retained_rows: int
    n_students: int
    n_rows_complete_lags: int
    n_work_status_imputed: int
    exclusions: dict
    cohort_sizes: dict
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "n_input_rows": self.n_input_rows,
            "n_retained_rows": self.n_retained_rows,
            "n_students": self.n_students,
            "n_rows_complete_lags": self.n_rows_complete_lags,
            "n_work_status_imputed": self.n_work_status_imputed,
            "exclusions": dict(self.exclusions),
            "cohort_sizes": {str(k): v for k, v in self.cohort_sizes.items()},
            "warnings": list(self.warnings),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def merge_inflation_at_entry(panel, cpi):
    """Attach the compounded inflation rate of each row's cohort year."""
    cohorts = sorted(set(int(c) for c in panel["cohort_year"]))
    missing = [c for c in cohorts if c not in cpi.changes]
    if missing:
        raise IngestionError(f"CPI series lacks cohort years: {', '.join(map(str, missing))}")
    rates = {c: cpi.annual_rate(c) for c in cohorts}
    out = panel.copy()
    out["inflation_at_entry"] = out["cohort_year"].map(rates).astype(float)
    return out


def _work_status_counts(rec):
    """Observed work-status tallies per (cohort, position) and cumulative in position."""
    obs = rec[rec["work_status"].notna()]
    grid = (obs.groupby(["cohort_year", "_pos"])["work_status"]
            .agg(n1="sum", n="count").reset_index())
    grid["n0"] = grid["n"] - grid["n1"]
    grid = grid.sort_values(["cohort_year", "_pos"], kind="mergesort")
    grid["c1"] = grid.groupby("cohort_year")["n1"].cumsum()
    grid["c0"] = grid.groupby("cohort_year")["n0"].cumsum()
    return grid


def _impute_work_status(rec):
    """Modal observed work status within cohort at the same semester.

    Falls back to the cohort's mode over all semesters up to the row's own,
    then to 0. Ties resolve to 0. Only information observable by the end of
    the row's semester is used.
    """
    miss = rec["work_status"].isna().to_numpy()
    values = rec["work_status"].to_numpy(dtype=float).copy()
    if not miss.any():
        return values, miss
    grid = _work_status_counts(rec)
    same = {(c, p): (n1, n0) for c, p, n1, n0 in zip(grid["cohort_year"], grid["_pos"], grid["n1"], grid["n0"])}
    cum = {}
    for c, sub in grid.groupby("cohort_year"):
        cum[c] = (sub["_pos"].to_numpy(), sub["c1"].to_numpy(), sub["c0"].to_numpy())
    for i in np.flatnonzero(miss):
        c, p = int(rec["cohort_year"].iat[i]), int(rec["_pos"].iat[i])
        if (c, p) in same and sum(same[(c, p)]) > 0:
            n1, n0 = same[(c, p)]
        elif c in cum and cum[c][0][0] <= p:
            j = np.searchsorted(cum[c][0], p, side="right") - 1
            n1, n0 = cum[c][1][j], cum[c][2][j]
        else:
            n1, n0 = 0, 0
        values[i] = 1.0 if n1 > n0 else 0.0
    return values, miss


def assemble_panel(records, cpi, calendar):
    """Build the leak-aware student-semester panel.

    Returns ``(panel, report)``. Rows after a recorded graduation and rows
    whose enrollment flags contradict the record stream are dropped and
    listed in the report's warnings.
    """
    rec = validate_records(records)
    n_input = len(rec)
    rec = rec.sort_values(["student_id", "semester_number"], kind="mergesort").reset_index(drop=True)
    rec["_pos"] = calendar_position(rec["calendar_year"], rec["semester_of_year"])

    by_student = rec.groupby("student_id", sort=False)
    first = by_student["semester_number"].transform("min")
    first_pos = by_student["_pos"].transform("first")
    rec["_entry"] = first_pos - (first - 1)

    grad_sn = rec["semester_number"].where(rec["graduated_by_next"])
    first_grad = grad_sn.groupby(rec["student_id"]).transform("min")
    after_grad = (rec["semester_number"] > first_grad).fillna(False).to_numpy(dtype=bool)
    inconsistent = (rec["graduated_by_next"] & rec["enrolled_next"]).to_numpy() & ~after_grad
    next_pos = by_student["_pos"].shift(-1)
    contradictory = ((~rec["enrolled_next"]) & (~rec["graduated_by_next"])
                     & (next_pos == rec["_pos"] + 1)).to_numpy() & ~after_grad & ~inconsistent

    warnings = []
    for mask, reason in ((after_grad, "record after graduation"),
                         (inconsistent, "graduated_by_next and enrolled_next both set"),
                         (contradictory, "enrolled_next false but enrolled in the next semester")):
        for i in np.flatnonzero(mask):
            warnings.append(f"{reason}: student {rec['student_id'].iat[i]} semester {rec['semester_number'].iat[i]}")

    work, imputed = _impute_work_status(rec)
    rec["work_status"] = work
    rec["work_status_imputed"] = imputed

    keep = ~(after_grad | inconsistent | contradictory)
    rec = rec.loc[keep].reset_index(drop=True)

    rec["dropout_next_sem"] = ((~rec["enrolled_next"]) & (~rec["graduated_by_next"])).astype(np.int64)
    rec = merge_inflation_at_entry(rec, cpi)
    by_pos = calendar.by_position()
    for k, col in zip((1, 2, 3), LAG_COLUMNS):
        target = rec["_pos"] - k
        lagged = target.map(by_pos).astype(float)
        rec[col] = lagged.where(target >= rec["_entry"])
    rec["interaction_term"] = rec["strikes_lag2"] * rec["inflation_at_entry"]

    panel = rec[PANEL_COLUMNS].copy()
    complete = int(panel[LAG_COLUMNS].notna().all(axis=1).sum())
    cohort_sizes = {int(c): int(n) for c, n in panel.groupby("cohort_year")["student_id"].nunique().items()}
    report = AssemblyReport(
        n_input_rows=n_input,
        n_retained_rows=len(panel),
        n_students=int(panel["student_id"].nunique()),
        n_rows_complete_lags=complete,
        n_work_status_imputed=int(panel["work_status_imputed"].sum()),
        exclusions={
            "after_graduation": int(after_grad.sum()),
            "inconsistent_flags": int(inconsistent.sum()),
            "contradictory_enrollment": int(contradictory.sum()),
        },
        cohort_sizes=cohort_sizes,
        warnings=warnings,
    )
    return panel, report


def model_rows(panel, extra=()):
    """Mask of rows usable in model matrices: all lags and controls present."""
    cols = [*LAG_COLUMNS, "inflation_at_entry", "dropout_next_sem", *CONTROL_COLUMNS, *extra]
    return panel[cols].notna().all(axis=1).to_numpy()


# ---------------------------------------------------------------------------
# Leakage audit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    row: int
    student_id: str
    semester_number: int
    column: str
    expected: object
    found: object


_AUDITED = ["cohort_year", "calendar_year", "semester_of_year", "dropout_next_sem", *LAG_COLUMNS,
            "inflation_at_entry", "interaction_term", "cum_gpa", "repeat_ratio",
            "credits_approved_cum", "gender_code", "work_status", "work_status_imputed"]


def _same(a, b):
    a_nan = a is None or (isinstance(a, float) and math.isnan(a))
    b_nan = b is None or (isinstance(b, (float, np.floating)) and math.isnan(b))
    if a_nan or b_nan:
        return a_nan and b_nan
    return abs(float(a) - float(b)) <= 1e-12 * max(1.0, abs(float(a)))


def validate_leakage(panel, records, cpi, calendar):
    """Recompute every panel feature from records up to the row's semester.

    Returns a list of :class:`Violation`, empty when each value of each row
    is reproducible from the student's records with ``semester_number <= t``,
    the CPI year of entry, the strike calendar strictly before ``t``, and
    cohort peers observed no later than ``t``.
    """
    rec = validate_records(records)
    rec["_pos"] = calendar_position(rec["calendar_year"], rec["semester_of_year"])
    history = {}
    for sid, sub in rec.groupby("student_id", sort=False):
        history[sid] = sub.sort_values("semester_number", kind="mergesort")
    tallies = {}
    for c, p, w in zip(rec["cohort_year"], rec["_pos"], rec["work_status"]):
        if not math.isnan(w):
            n1, n0 = tallies.get((c, p), (0, 0))
            tallies[(c, p)] = (n1 + int(w == 1), n0 + int(w == 0))
    by_cohort = {}
    for (c, p), counts in tallies.items():
        by_cohort.setdefault(c, []).append((p, counts))

    def modal(c, p):
        if (c, p) in tallies:
            n1, n0 = tallies[(c, p)]
        else:
            n1 = sum(k[0] for q, k in by_cohort.get(c, []) if q <= p)
            n0 = sum(k[1] for q, k in by_cohort.get(c, []) if q <= p)
        return 1.0 if n1 > n0 else 0.0

    rates = {}
    violations = []
    for i, row in enumerate(panel.to_dict("records")):
        sid, t = str(row["student_id"]), int(row["semester_number"])
        hist = history.get(sid)
        past = hist[hist["semester_number"] <= t] if hist is not None else None
        if past is None or past.empty or past["semester_number"].iat[-1] != t:
            violations.append(Violation(i, sid, t, "semester_number", None, t))
            continue
        own = past.iloc[-1]
        first = past.iloc[0]
        entry = int(first["_pos"]) - (int(first["semester_number"]) - 1)
        pos = int(own["_pos"])
        cohort = int(own["cohort_year"])
        if cohort not in rates:
            rates[cohort] = cpi.annual_rate(cohort) if cohort in cpi.changes else float("nan")
        expected = {
            "cohort_year": cohort,
            "calendar_year": int(own["calendar_year"]),
            "semester_of_year": int(own["semester_of_year"]),
            "dropout_next_sem": int(not own["enrolled_next"] and not own["graduated_by_next"]),
            "inflation_at_entry": rates[cohort],
            "cum_gpa": float(own["cum_gpa"]),
            "repeat_ratio": float(own["repeat_ratio"]),
            "credits_approved_cum": float(own["credits_approved_cum"]),
            "gender_code": int(own["gender_code"]),
        }
        for k, col in zip((1, 2, 3), LAG_COLUMNS):
            target = pos - k
            if target < entry:
                expected[col] = float("nan")
            else:
                expected[col] = calendar.get(*position_to_semester(target))
        lag2 = expected["strikes_lag2"]
        expected["interaction_term"] = lag2 * expected["inflation_at_entry"]
        if math.isnan(float(own["work_status"])):
            expected["work_status"] = modal(cohort, pos)
            expected["work_status_imputed"] = 1
        else:
            expected["work_status"] = float(own["work_status"])
            expected["work_status_imputed"] = 0
        for col in _AUDITED:
            if col not in row:
                continue
            found = row[col]
            if isinstance(found, (bool, np.bool_)):
                found = int(found)
            if not _same(expected[col], found):
                violations.append(Violation(i, sid, t, col, expected[col], found))
    return violations


# ---------------------------------------------------------------------------
# CSV input/output
# ---------------------------------------------------------------------------

def _read_text_csv(path, required):
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise SchemaError(f"cannot read CSV: {exc}", file=str(path)) from exc
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise SchemaError(f"missing columns: {', '.join(missing)}", file=str(path), line=1)
    return frame


def read_enrollment_csv(path):
    return validate_records(_read_text_csv(path, ENROLLMENT_COLUMNS), source=str(path))


def _cell_float(frame, i, col, path):
    try:
        return float(frame[col].iat[i])
    except ValueError:
        raise SchemaError(f"not a number: {frame[col].iat[i]!r}", file=str(path), line=i + 2, column=col) from None


def read_cpi_csv(path):
    frame = _read_text_csv(path, ["year", "month", "variacion"])
    months = {}
    for i in range(len(frame)):
        year = int(_cell_float(frame, i, "year", path))
        month = int(_cell_float(frame, i, "month", path))
        if not 1 <= month <= 12:
            raise SchemaError(f"month {month} outside 1..12", file=str(path), line=i + 2, column="month")
        slot = months.setdefault(year, {})
        if month in slot:
            raise SchemaError(f"duplicate month {month} for year {year}", file=str(path), line=i + 2, column="month")
        slot[month] = _cell_float(frame, i, "variacion", path)
    changes = {}
    for year, slot in months.items():
        if sorted(slot) != list(range(1, 13)):
            raise SchemaError(f"CPI year {year} does not have all 12 months", file=str(path), column="month")
        changes[year] = [slot[m] for m in range(1, 13)]
    return CpiMonthlySeries(changes)


def read_strikes_csv(path):
    frame = _read_text_csv(path, ["calendar_year", "semester_of_year", "strike_intensity"])
    entries = {}
    for i in range(len(frame)):
        key = (int(_cell_float(frame, i, "calendar_year", path)),
               int(_cell_float(frame, i, "semester_of_year", path)))
        if key in entries:
            raise IngestionError(f"duplicate strike calendar key {key} ({path}, line {i + 2})")
        entries[key] = _cell_float(frame, i, "strike_intensity", path)
    return StrikeCalendar(entries)


def write_enrollment_csv(records, path):
    out = records[ENROLLMENT_COLUMNS].copy()
    for col in _BOOL_COLUMNS:
        out[col] = out[col].astype(int)
    out["work_status"] = out["work_status"].map(lambda v: "" if pd.isna(v) else str(int(v)))
    out.to_csv(path, index=False, lineterminator="\n")


def write_cpi_csv(cpi, path):
    rows = [(y, m + 1, v) for y, months in cpi.changes.items() for m, v in enumerate(months)]
    pd.DataFrame(rows, columns=["year", "month", "variacion"]).to_csv(path, index=False, lineterminator="\n")


def write_strikes_csv(calendar, path):
    rows = [(y, s, v) for (y, s), v in calendar.intensity.items()]
    pd.DataFrame(rows, columns=["calendar_year", "semester_of_year", "strike_intensity"]).to_csv(
        path, index=False, lineterminator="\n")


def write_panel_csv(panel, path):
    out = panel[PANEL_COLUMNS].copy()
    out["work_status_imputed"] = out["work_status_imputed"].astype(int)
    out.to_csv(path, index=False, lineterminator="\n")


def read_panel_csv(path):
    frame = _read_text_csv(path, PANEL_COLUMNS)
    panel = pd.DataFrame({"student_id": frame["student_id"].astype(str)})
    for col in PANEL_COLUMNS[1:]:
        values = np.empty(len(frame))
        for i, v in enumerate(frame[col]):
            if v.strip() == "":
                values[i] = np.nan
                continue
            try:
                values[i] = float(v)
            except ValueError:
                raise SchemaError(f"not a number: {v!r}", file=str(path), line=i + 2, column=col) from None
        panel[col] = values
    for col in ["semester_number", "calendar_year", "semester_of_year", "cohort_year", "dropout_next_sem",
                "gender_code"]:
        if panel[col].isna().any():
            i = int(np.flatnonzero(panel[col].isna().to_numpy())[0])
            raise SchemaError("missing value", file=str(path), line=i + 2, column=col)
        panel[col] = panel[col].astype(np.int64)
    if not panel["dropout_next_sem"].isin([0, 1]).all():
        raise SchemaError("dropout_next_sem must be 0 or 1", file=str(path), column="dropout_next_sem")
    panel["work_status_imputed"] = panel["work_status_imputed"].fillna(0).astype(bool)
    return panel
