"""Event ingestion, daily aggregation and covariate construction.

Input is a CSV with a header. Two layouts are recognised:

* minimal: ``date`` (ISO), ``nkill``, ``country``
* GTD export: ``iyear``, ``imonth``, ``iday``, ``nkill``, ``country_txt``

GTD rows with ``imonth`` or ``iday`` equal to 0 (unknown date) are dropped and
counted. Blank ``nkill`` is read as 0 and counted.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import (
    FATALITY_INTERIOR_KNOTS,
    TIME_KNOT_SPACING,
    BasisSpec,
    DesignMatrix,
    build_basis,
    default_fatality_spec,
    default_time_spec,
)
from .model import EventSeries

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class EventRecord:
    date: dt.date
    fatalities: int
    country: str = ""


def parse_window(text: str | None):
    """``"2000-01-01:2016-12-31"`` -> pair of dates; either side may be empty."""
    if not text:
        return None
    try:
        start, end = text.split(":")
        return (
            dt.date.fromisoformat(start) if start else None,
            dt.date.fromisoformat(end) if end else None,
        )
    except ValueError as exc:
        raise DataError(f"bad window {text!r}; expected START:END in ISO dates") from exc


def _parse_nkill(raw: str, lineno: int) -> tuple[int, bool]:
    raw = (raw or "").strip()
    if raw == "":
        return 0, True
    try:
        value = float(raw)
    except ValueError as exc:
        raise DataError(f"line {lineno}: unparseable nkill {raw!r}") from exc
    if value < 0 or value != int(value):
        raise DataError(f"line {lineno}: nkill must be a nonnegative integer, got {raw!r}")
    return int(value), False


def read_events(path) -> tuple[list[EventRecord], dict]:
    """Read event rows; returns the records and a report of imputations/exclusions."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    report = {"rows": 0, "imputed_fatalities": 0, "unknown_date": 0}
    records = []
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        gtd = {"iyear", "imonth", "iday"} <= cols
        if not gtd and "date" not in cols:
            raise DataError("input needs a 'date' column or GTD iyear/imonth/iday columns")
        if "nkill" not in cols:
            raise DataError("input needs an 'nkill' column")
        country_col = "country" if "country" in cols else ("country_txt" if "country_txt" in cols else None)
        for lineno, row in enumerate(reader, start=2):
            report["rows"] += 1
            try:
                if gtd:
                    y, m, d = (int(row[k]) for k in ("iyear", "imonth", "iday"))
                    if m == 0 or d == 0:
                        report["unknown_date"] += 1
                        continue
                    date = dt.date(y, m, d)
                else:
                    date = dt.date.fromisoformat(row["date"].strip())
            except (ValueError, TypeError, AttributeError) as exc:
                raise DataError(f"line {lineno}: unparseable date ({exc})") from exc
            nkill, imputed = _parse_nkill(row["nkill"], lineno)
            report["imputed_fatalities"] += imputed
            country = (row.get(country_col) or "").strip() if country_col else ""
            records.append(EventRecord(date, nkill, country))
    return records, report


def aggregate(records, window=None, start=None, end=None) -> EventSeries:
    """Daily grid over the window; counts and summed fatalities per day."""
    if window is not None:
        start, end = window
    if not records and (start is None or end is None):
        raise DataError("no events to aggregate")
    dates = [r.date for r in records]
    start = start or min(dates)
    end = end or max(dates)
    if end < start:
        raise DataError(f"window end {end} precedes start {start}")
    T = (end - start).days + 1
    counts = np.zeros(T, dtype=np.int64)
    fat = np.zeros(T, dtype=np.int64)
    for r in records:
        i = (r.date - start).days
        if 0 <= i < T:
            counts[i] += 1
            fat[i] += r.fatalities
    return EventSeries(start, counts, fat)


def ingest_csv(path, country: str | None = None, window=None) -> EventSeries:
    """Load an event CSV into a daily :class:`EventSeries`.

    ``window`` is a ``(start, end)`` pair of dates (inclusive) or a
    ``"START:END"`` string.
    """
    if isinstance(window, str):
        window = parse_window(window)
    records, report = read_events(path)
    if country is not None:
        kept = [r for r in records if r.country == country]
        report["other_country"] = len(records) - len(kept)
        records = kept
    start, end = window if window else (None, None)
    inside = [r for r in records if (start is None or r.date >= start) and (end is None or r.date <= end)]
    report["outside_window"] = len(records) - len(inside)
    if not inside:
        raise DataError("no events left after filtering")
    series = aggregate(inside, start=start, end=end)
    report["events"] = len(inside)
    series.notes.update(report)
    if report["imputed_fatalities"] or report["unknown_date"]:
        log.info(
            "%d blank fatality fields read as 0; %d rows with unknown dates dropped",
            report["imputed_fatalities"],
            report["unknown_date"],
        )
    return series


def write_events_csv(path, dates, fatalities, country: str = "SIM") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "nkill", "country"])
        for d, f in zip(dates, fatalities):
            w.writerow([d.isoformat(), int(f), country])


def series_event_dates(series: EventSeries, event_day, start=None) -> list[dt.date]:
    start = start or series.start_date
    return [start + dt.timedelta(days=int(i)) for i in event_day]


def write_series_csv(path, series: EventSeries) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "count", "fatalities"])
        for d, c, f in zip(series.dates, series.counts, series.fatalities):
            w.writerow([d.isoformat(), int(c), int(f)])


def read_series_csv(path) -> EventSeries:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"empty series file {path}")
    start = dt.date.fromisoformat(rows[0]["date"])
    return EventSeries(start, [int(r["count"]) for r in rows], [int(r["fatalities"]) for r in rows])


def build_covariates(
    series: EventSeries,
    time_spec: BasisSpec | None = None,
    fatality_spec: BasisSpec | None = None,
    knot_spacing: int = TIME_KNOT_SPACING,
    fatality_knots: int = FATALITY_INTERIOR_KNOTS,
) -> tuple[DesignMatrix, DesignMatrix]:
    """Time basis ``X`` over day index and fatality basis ``W`` over ``ln(f+1)``.

    The fatality basis domain is the observed range of ``ln(f+1)`` unless a
    spec is passed.
    """
    T = len(series)
    if T == 0:
        raise DataError("empty series")
    time_spec = time_spec or default_time_spec(T, knot_spacing)
    x = series.log_fatalities
    fatality_spec = fatality_spec or default_fatality_spec(x, fatality_knots)
    lo, hi = fatality_spec.domain
    X = build_basis(time_spec, np.arange(T, dtype=float))
    W = build_basis(fatality_spec, np.clip(x, lo, hi))
    return X, W
