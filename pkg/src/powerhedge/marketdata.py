"""Market-data ingestion and preprocessing.

Half-hourly demand snapshots are averaged into hourly loads (MWh), spot
prices arrive hourly in GBP/MWh, and forward quotes carry one base and one
peak close per delivery month.  Preprocessing covers 3-standard-deviation
spike capping over a training window, load normalization against a global
maximum, the weekday 07-19h peak calendar, and descriptive SD-bucket
histograms.

Timestamps are naive local-time ``numpy.datetime64`` values at minute
resolution; daylight-saving duplicates or holes surface as reported gaps
rather than being silently patched.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateStatsError, GapError, ParseError

PEAK_HOURS = frozenset(range(7, 19))  # delivery hours starting 07:00..18:00

UNIT_PRICE = "GBP/MWh"
UNIT_MWH = "MWh"
UNIT_NORMALIZED = "normalized"
_UNITS = (UNIT_PRICE, UNIT_MWH, UNIT_NORMALIZED)


def _as_minutes(ts):
    return np.asarray(ts, dtype="datetime64[m]")


def weekday_index(ts):
    """0=Monday .. 6=Sunday for datetime64 arrays (epoch day was a Thursday)."""
    days = _as_minutes(ts).astype("datetime64[D]").astype(np.int64)
    return (days + 3) % 7


def hour_of_day(ts):
    ts = _as_minutes(ts)
    return (ts.astype("datetime64[h]") - ts.astype("datetime64[D]").astype("datetime64[h]")).astype(np.int64)


def peak_mask(ts):
    """True where the hour starting at ts delivers within the weekday
    07:00-19:00 peak block."""
    return (weekday_index(ts) < 5) & np.isin(hour_of_day(ts), list(PEAK_HOURS))


def classify_hour(ts):
    """'peak' or 'off-peak' for a single hour-start timestamp."""
    return "peak" if bool(peak_mask(np.asarray([ts], dtype="datetime64[m]"))[0]) else "off-peak"


def month_hour_range(year, month):
    """All hour-start timestamps of a calendar month, in order."""
    start = np.datetime64(f"{year:04d}-{month:02d}", "M").astype("datetime64[h]")
    end = (np.datetime64(f"{year:04d}-{month:02d}", "M") + 1).astype("datetime64[h]")
    return np.arange(start, end).astype("datetime64[m]")


def month_peak_offpeak(year, month):
    """Peak and off-peak hour sets of a month; a disjoint cover of all hours."""
    hours = month_hour_range(year, month)
    mask = peak_mask(hours)
    return hours[mask], hours[~mask]


@dataclass(frozen=True)
class RawDemandSeries:
    """Half-hourly demand snapshots in MW, strictly increasing timestamps."""

    timestamps: np.ndarray
    demand_mw: np.ndarray

    def __post_init__(self):
        ts = _as_minutes(self.timestamps)
        vals = np.asarray(self.demand_mw, dtype=float)
        if ts.shape != vals.shape or ts.ndim != 1:
            raise DataError("timestamps and demand values must be aligned 1-d arrays")
        if ts.size and np.any(np.diff(ts) <= np.timedelta64(0, "m")):
            raise DataError("demand timestamps must be strictly increasing")
        if np.any(~np.isfinite(vals)):
            raise DataError("demand values must be finite")
        minutes = (ts - ts.astype("datetime64[h]").astype("datetime64[m]")).astype(np.int64)
        if np.any(~np.isin(minutes, (0, 30))):
            raise DataError("demand readings must fall on :00 or :30")
        ts.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "demand_mw", vals)

    def __len__(self):
        return self.timestamps.size


@dataclass(frozen=True)
class HourlySeries:
    """Hour-start timestamps with one finite value each and a unit tag."""

    timestamps: np.ndarray
    values: np.ndarray
    unit: str

    def __post_init__(self):
        ts = _as_minutes(self.timestamps)
        vals = np.asarray(self.values, dtype=float)
        if self.unit not in _UNITS:
            raise DataError(f"unknown unit {self.unit!r}; expected one of {_UNITS}")
        if ts.shape != vals.shape or ts.ndim != 1:
            raise DataError("timestamps and values must be aligned 1-d arrays")
        if np.any(ts != ts.astype("datetime64[h]").astype("datetime64[m]")):
            raise DataError("hourly timestamps must fall on the hour")
        if ts.size and np.any(np.diff(ts) <= np.timedelta64(0, "m")):
            raise DataError("hourly timestamps must be strictly increasing")
        if np.any(~np.isfinite(vals)):
            raise DataError("hourly values must be finite")
        ts.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.timestamps.size

    @property
    def is_contiguous(self):
        """True when consecutive timestamps are exactly one hour apart."""
        if len(self) < 2:
            return True
        return bool(np.all(np.diff(self.timestamps) == np.timedelta64(60, "m")))

    def between(self, start, end):
        """Sub-series with start <= t < end."""
        start = np.datetime64(start, "m")
        end = np.datetime64(end, "m")
        mask = (self.timestamps >= start) & (self.timestamps < end)
        return HourlySeries(self.timestamps[mask], self.values[mask], self.unit)

    def with_values(self, values):
        return HourlySeries(self.timestamps, np.asarray(values, dtype=float), self.unit)


@dataclass(frozen=True)
class ForwardQuote:
    """Base and peak forward closes for one delivery month."""

    year: int
    month: int
    quote_date: dt.date
    base_close: float
    peak_close: float

    def __post_init__(self):
        if not (1 <= self.month <= 12):
            raise DataError(f"delivery month {self.month} out of range")
        if not (np.isfinite(self.base_close) and np.isfinite(self.peak_close)):
            raise DataError("forward closes must be finite")
        if self.base_close <= 0.0:
            raise DataError(f"base close must be positive, got {self.base_close}")
        if self.peak_close < self.base_close:
            raise DataError(
                f"peak close {self.peak_close} below base close {self.base_close} "
                f"for {self.year:04d}-{self.month:02d}"
            )

    @property
    def delivery_month(self):
        return f"{self.year:04d}-{self.month:02d}"


def demand_to_load(raw, strict=False):
    """Average the :00 and :30 demand readings of each hour into an hourly
    load series in MWh (constant power over the hour).

    Hours missing either half-hour reading are excluded and returned as the
    gap list; with ``strict=True`` any gap raises GapError instead.
    Returns ``(series, gaps)`` where gaps are the missing half-hour
    timestamps.
    """
    ts = raw.timestamps
    vals = raw.demand_mw
    hours = ts.astype("datetime64[h]")
    minute = (ts - hours.astype("datetime64[m]")).astype(np.int64)

    uniq = np.unique(hours)
    on_hour = dict(zip(hours[minute == 0].tolist(), vals[minute == 0]))
    on_half = dict(zip(hours[minute == 30].tolist(), vals[minute == 30]))

    out_ts, out_vals, gaps = [], [], []
    for h in uniq.tolist():
        a = on_hour.get(h)
        b = on_half.get(h)
        if a is None or b is None:
            if a is None:
                gaps.append(np.datetime64(h, "m"))
            if b is None:
                gaps.append(np.datetime64(h, "m") + np.timedelta64(30, "m"))
            continue
        out_ts.append(np.datetime64(h, "m"))
        out_vals.append(0.5 * (a + b))
    if gaps and strict:
        raise GapError(f"{len(gaps)} missing half-hour readings", missing=gaps)
    series = HourlySeries(np.array(out_ts, dtype="datetime64[m]"), np.array(out_vals), UNIT_MWH)
    return series, tuple(gaps)


@dataclass(frozen=True)
class CapStats:
    """Frozen pre-cap window statistics (classes pooled)."""

    price_mean: float
    price_sd: float
    load_mean: float
    load_sd: float


@dataclass(frozen=True)
class CapEvent:
    timestamp: np.datetime64
    series: str  # "price" or "load"
    original: float
    capped: float


@dataclass(frozen=True)
class CapResult:
    price: HourlySeries
    load: HourlySeries
    events: tuple
    stats: CapStats

    @property
    def capped_hours(self):
        return tuple(sorted({e.timestamp for e in self.events}))


def cap_spikes(price, load, stats=None):
    """Clip price values outside mean +/- 3 SD of the supplied window to the
    nearer bound; wherever price was clipped, clip the co-timed load to its
    own 3-SD band as well.

    Statistics pool peak and off-peak hours and come from the series passed
    in (the training window); pass ``stats`` to reuse frozen pre-cap
    statistics, which makes the operation idempotent.
    """
    if len(price) != len(load) or np.any(price.timestamps != load.timestamps):
        raise DataError("price and load must share the same hourly grid")
    if len(price) == 0:
        raise DataError("cap_spikes needs a nonempty window")
    if stats is None:
        stats = CapStats(
            float(np.mean(price.values)),
            float(np.std(price.values)),
            float(np.mean(load.values)),
            float(np.std(load.values)),
        )
    if stats.price_sd == 0.0:
        raise DegenerateStatsError("price window has zero variance")

    lo_p = stats.price_mean - 3.0 * stats.price_sd
    hi_p = stats.price_mean + 3.0 * stats.price_sd
    clipped_p = np.clip(price.values, lo_p, hi_p)
    price_hit = clipped_p != price.values

    if np.any(price_hit) and stats.load_sd == 0.0:
        raise DegenerateStatsError("load window has zero variance at price-capped hours")
    lo_l = stats.load_mean - 3.0 * stats.load_sd
    hi_l = stats.load_mean + 3.0 * stats.load_sd
    clipped_l = load.values.copy()
    clipped_l[price_hit] = np.clip(load.values[price_hit], lo_l, hi_l)
    load_hit = clipped_l != load.values

    events = []
    for i in np.flatnonzero(price_hit | load_hit):
        if price_hit[i]:
            events.append(CapEvent(price.timestamps[i], "price", float(price.values[i]), float(clipped_p[i])))
        if load_hit[i]:
            events.append(CapEvent(load.timestamps[i], "load", float(load.values[i]), float(clipped_l[i])))
    return CapResult(price.with_values(clipped_p), load.with_values(clipped_l), tuple(events), stats)


def normalize_load(load, global_max):
    """Rebase a load series against the study-wide maximum load (MWh)."""
    if not np.isfinite(global_max) or global_max <= 0.0:
        raise DataError(f"global maximum load must be positive, got {global_max!r}")
    return HourlySeries(load.timestamps, load.values / global_max, UNIT_NORMALIZED)


_BUCKET_EDGES = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, np.inf)
BUCKET_LABELS = ("[0,1)", "[1,2)", "[2,3)", "[3,4)", "[4,5)", "[5,inf)")


@dataclass(frozen=True)
class BucketStats:
    mean: float
    sd: float
    counts: tuple
    percentages: tuple


def sd_bucket_histogram(series, split=None):
    """Per-class histogram of |value - class mean| / class SD over the
    buckets [0,1) .. [5,inf).

    ``split`` is an optional boolean peak mask; by default it is derived
    from the series timestamps via the weekday 07-19h calendar.  Returns a
    dict with 'peak' and 'off-peak' entries.
    """
    if split is None:
        split = peak_mask(series.timestamps)
    else:
        split = np.asarray(split, dtype=bool)
        if split.shape != series.values.shape:
            raise DataError("split mask must align with the series")
    out = {}
    for label, mask in (("peak", split), ("off-peak", ~split)):
        vals = series.values[mask]
        if vals.size == 0:
            raise DataError(f"no {label} hours in series")
        mean = float(np.mean(vals))
        sd = float(np.std(vals))
        if sd == 0.0:
            raise DegenerateStatsError(f"{label} values have zero variance")
        z = np.abs(vals - mean) / sd
        counts = np.histogram(z, bins=_BUCKET_EDGES)[0]
        pct = counts / vals.size * 100.0
        out[label] = BucketStats(mean, sd, tuple(int(c) for c in counts), tuple(float(p) for p in pct))
    return out


def _open_rows(path):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    with fh:
        yield from csv.reader(fh)


def _parse_timestamp(text, line):
    try:
        parsed = dt.datetime.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(f"bad timestamp {text!r}", line=line) from None
    if parsed.tzinfo is not None:
        raise ParseError(f"timestamps must be naive local time, got {text!r}", line=line)
    return np.datetime64(parsed.replace(second=0, microsecond=0), "m")


def _parse_float(text, line, column):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"bad {column} value {text!r}", line=line) from None


def _check_header(row, expected, path):
    if [c.strip() for c in row] != list(expected):
        raise ParseError(f"{path}: expected header {','.join(expected)!r}, got {','.join(row)!r}", line=1)


def read_demand_csv(path):
    """Parse `timestamp,demand_mw` half-hourly readings."""
    ts, vals = [], []
    rows = _open_rows(path)
    try:
        header = next(rows)
    except StopIteration:
        raise ParseError(f"{path}: empty file", line=1) from None
    _check_header(header, ("timestamp", "demand_mw"), path)
    for line, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"{path}: expected 2 columns, got {len(row)}", line=line)
        ts.append(_parse_timestamp(row[0], line))
        vals.append(_parse_float(row[1], line, "demand_mw"))
    try:
        return RawDemandSeries(np.array(ts, dtype="datetime64[m]"), np.array(vals))
    except DataError as exc:
        raise ParseError(f"{path}: {exc}") from None


def read_spot_csv(path):
    """Parse `timestamp,price_gbp_mwh` hourly prices."""
    ts, vals = [], []
    rows = _open_rows(path)
    try:
        header = next(rows)
    except StopIteration:
        raise ParseError(f"{path}: empty file", line=1) from None
    _check_header(header, ("timestamp", "price_gbp_mwh"), path)
    for line, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"{path}: expected 2 columns, got {len(row)}", line=line)
        stamp = _parse_timestamp(row[0], line)
        if stamp != stamp.astype("datetime64[h]").astype("datetime64[m]"):
            raise ParseError(f"{path}: spot timestamp not on the hour: {row[0]!r}", line=line)
        ts.append(stamp)
        vals.append(_parse_float(row[1], line, "price_gbp_mwh"))
    try:
        return HourlySeries(np.array(ts, dtype="datetime64[m]"), np.array(vals), UNIT_PRICE)
    except DataError as exc:
        raise ParseError(f"{path}: {exc}") from None


def read_forwards_csv(path):
    """Parse `delivery_month,quote_date,base_close,peak_close` monthly quotes.

    Returns a dict keyed by 'YYYY-MM'.
    """
    out = {}
    rows = _open_rows(path)
    try:
        header = next(rows)
    except StopIteration:
        raise ParseError(f"{path}: empty file", line=1) from None
    _check_header(header, ("delivery_month", "quote_date", "base_close", "peak_close"), path)
    for line, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ParseError(f"{path}: expected 4 columns, got {len(row)}", line=line)
        month_text = row[0].strip()
        try:
            year_s, month_s = month_text.split("-")
            year, month = int(year_s), int(month_s)
            if len(year_s) != 4 or len(month_s) != 2:
                raise ValueError
        except ValueError:
            raise ParseError(f"{path}: delivery_month must be YYYY-MM, got {month_text!r}", line=line) from None
        try:
            quote_date = dt.date.fromisoformat(row[1].strip())
        except ValueError:
            raise ParseError(f"{path}: bad quote_date {row[1]!r}", line=line) from None
        base = _parse_float(row[2], line, "base_close")
        peak = _parse_float(row[3], line, "peak_close")
        if month_text in out:
            raise ParseError(f"{path}: duplicate delivery month {month_text}", line=line)
        try:
            out[month_text] = ForwardQuote(year, month, quote_date, base, peak)
        except DataError as exc:
            raise ParseError(f"{path}: {exc}", line=line) from None
    return out
