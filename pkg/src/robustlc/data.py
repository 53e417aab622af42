"""Mortality panels: loading, log rates and hypothetical-pandemic injection."""

from dataclasses import dataclass, field, replace
from importlib import resources
import csv
import os
import re

import numpy as np

DEFAULT_RATE_FLOOR = 1e-8


class DataError(ValueError):
    """Malformed or inconsistent mortality input."""


@dataclass(frozen=True, eq=False)
class MortalityDataset:
    """Rectangular age x year panel of deaths and exposures.

    ``deaths`` and ``exposures`` are indexed ``[age, year]``. Deaths are kept
    as reals because HMD spreads deaths of unknown age fractionally.
    """

    ages: np.ndarray
    years: np.ndarray
    deaths: np.ndarray
    exposures: np.ndarray
    rate_floor: float = DEFAULT_RATE_FLOOR

    def __post_init__(self):
        ages = np.asarray(self.ages, dtype=int)
        years = np.asarray(self.years, dtype=int)
        deaths = np.array(self.deaths, dtype=float)
        exposures = np.array(self.exposures, dtype=float)
        for name, arr in (("ages", ages), ("years", years)):
            if arr.ndim != 1 or arr.size == 0:
                raise DataError(f"{name} must be a nonempty vector")
            if arr.size > 1 and np.any(np.diff(arr) != 1):
                raise DataError(f"{name} must be strictly increasing with unit step")
        shape = (ages.size, years.size)
        if deaths.shape != shape or exposures.shape != shape:
            raise DataError(
                f"deaths {deaths.shape} and exposures {exposures.shape} must both be {shape}"
            )
        if not np.all(np.isfinite(deaths)) or np.any(deaths < 0):
            raise DataError("deaths must be finite and nonnegative")
        if not np.all(np.isfinite(exposures)) or np.any(exposures <= 0):
            raise DataError("nonpositive exposure")
        if not self.rate_floor > 0:
            raise DataError("rate_floor must be positive")
        for arr in (ages, years, deaths, exposures):
            arr.flags.writeable = False
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "deaths", deaths)
        object.__setattr__(self, "exposures", exposures)

    @property
    def shape(self):
        return self.deaths.shape

    def rates(self):
        return self.deaths / self.exposures

    def with_deaths(self, deaths):
        return replace(self, deaths=deaths)

    def subset(self, ages=None, years=None):
        """Restrict to inclusive ``(lo, hi)`` age and/or year windows."""
        ia = _window_index(self.ages, ages, "age")
        iy = _window_index(self.years, years, "year")
        return MortalityDataset(
            self.ages[ia], self.years[iy],
            self.deaths[np.ix_(ia, iy)], self.exposures[np.ix_(ia, iy)],
            self.rate_floor,
        )

    def year_index(self, year):
        idx = int(year) - int(self.years[0])
        if not 0 <= idx < self.years.size:
            raise DataError(f"year {year} outside panel {self.years[0]}-{self.years[-1]}")
        return idx


def _window_index(values, window, what):
    if window is None:
        return np.arange(values.size)
    lo, hi = window
    idx = np.flatnonzero((values >= lo) & (values <= hi))
    if idx.size == 0:
        raise DataError(f"{what} window {lo}:{hi} selects nothing")
    return idx


def log_rates(ds):
    """Log central death rates ``log(max(D/N, rate_floor))``, indexed [age, year]."""
    return np.log(np.maximum(ds.deaths / ds.exposures, ds.rate_floor))


_AGE_RE = re.compile(r"^(\d+)\+?$")


def parse_age(token):
    """``"100+"`` -> 100, ``"35"`` -> 35. HMD interval ages like ``"1-4"`` are rejected."""
    m = _AGE_RE.match(token.strip())
    if m is None:
        raise ValueError(f"cannot parse age token {token!r}")
    return int(m.group(1))


def _assemble(cells, rate_floor, source):
    if not cells:
        raise DataError(f"{source}: no data rows")
    ages = sorted({a for a, _ in cells})
    years = sorted({y for _, y in cells})
    if ages[-1] - ages[0] + 1 != len(ages) or years[-1] - years[0] + 1 != len(years):
        raise DataError(f"{source}: non-rectangular panel (gaps in ages or years)")
    deaths = np.full((len(ages), len(years)), np.nan)
    exposures = np.full_like(deaths, np.nan)
    for (age, year), (d, n) in cells.items():
        deaths[age - ages[0], year - years[0]] = d
        exposures[age - ages[0], year - years[0]] = n
    missing = np.argwhere(np.isnan(deaths) | np.isnan(exposures))
    if missing.size:
        i, j = missing[0]
        raise DataError(
            f"{source}: non-rectangular panel, missing cell age {ages[i]} year {years[j]}"
        )
    return MortalityDataset(np.array(ages), np.array(years), deaths, exposures, rate_floor)


def _read_csv_long(path):
    cells = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["year", "age", "deaths", "exposure"]:
            raise DataError(f"{path}:1: header must be 'year,age,deaths,exposure'")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                year = int(row[0])
                age = parse_age(row[1])
                d, n = float(row[2]), float(row[3])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if n <= 0:
                raise DataError(f"{path}:{lineno}: nonpositive exposure {n}")
            if (age, year) in cells:
                raise DataError(f"{path}:{lineno}: duplicate cell age {age} year {year}")
            cells[(age, year)] = (d, n)
    return cells


def _read_hmd_table(path):
    """Return {(age, year): Total} from an HMD 1x1 table."""
    out = {}
    header_seen = False
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if not header_seen:
                if parts[:2] == ["Year", "Age"]:
                    if "Total" not in parts:
                        raise DataError(f"{path}:{lineno}: no Total column")
                    total_col = parts.index("Total")
                    header_seen = True
                continue
            if len(parts) <= total_col:
                raise DataError(f"{path}:{lineno}: expected {total_col + 1} columns")
            try:
                year = int(parts[0])
                age = parse_age(parts[1])
                value = float(parts[total_col])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            out[(age, year)] = value
    if not header_seen:
        raise DataError(f"{path}: no 'Year Age ... Total' header line")
    return out


def load_dataset(path, format="csv_long", exposures_path=None, rate_floor=DEFAULT_RATE_FLOOR):
    """Load a mortality panel.

    Parameters
    ----------
    path : str or path-like
        ``csv_long``: a file with header ``year,age,deaths,exposure``.
        ``hmd_txt``: either an HMD ``Deaths_1x1.txt`` file (then
        ``exposures_path`` or a sibling ``Exposures_1x1.txt`` is used) or a
        directory containing both files. The Total column is read.
    format : {"csv_long", "hmd_txt"}
    """
    path = os.fspath(path)
    if format == "csv_long":
        cells = _read_csv_long(path)
    elif format == "hmd_txt":
        if os.path.isdir(path):
            deaths_path = os.path.join(path, "Deaths_1x1.txt")
            exposures_path = exposures_path or os.path.join(path, "Exposures_1x1.txt")
        else:
            deaths_path = path
            if exposures_path is None:
                exposures_path = os.path.join(os.path.dirname(path), "Exposures_1x1.txt")
        deaths = _read_hmd_table(deaths_path)
        exposures = _read_hmd_table(exposures_path)
        if deaths.keys() != exposures.keys():
            missing = sorted(deaths.keys() ^ exposures.keys())[0]
            raise DataError(
                f"deaths and exposures cover different cells (e.g. age {missing[0]} year {missing[1]})"
            )
        cells = {}
        for key, d in deaths.items():
            n = exposures[key]
            if n <= 0:
                raise DataError(f"{exposures_path}: nonpositive exposure at age {key[0]} year {key[1]}")
            cells[key] = (d, n)
    else:
        raise ValueError(f"unknown format {format!r}")
    return _assemble(cells, rate_floor, path)


def write_csv_long(ds, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["year", "age", "deaths", "exposure"])
        for j, year in enumerate(ds.years):
            for i, age in enumerate(ds.ages):
                w.writerow([int(year), int(age), repr(float(ds.deaths[i, j])),
                            repr(float(ds.exposures[i, j]))])


# ---------------------------------------------------------------------------
# pandemic tables


@dataclass(frozen=True)
class PandemicTable:
    """Deaths by age group. ``age_high=None`` marks an open-ended top group."""

    groups: tuple = field(default_factory=tuple)

    def __post_init__(self):
        groups = tuple((int(lo), None if hi is None else int(hi), float(d))
                       for lo, hi, d in self.groups)
        for i, (lo, hi, d) in enumerate(groups):
            if d < 0 or not np.isfinite(d):
                raise DataError(f"group {lo}-{hi}: deaths must be nonnegative")
            if hi is not None and hi < lo:
                raise DataError(f"group {lo}-{hi}: age_high < age_low")
            if i > 0:
                prev_hi = groups[i - 1][1]
                if prev_hi is None:
                    raise DataError("only the last group may be open-ended")
                if lo != prev_hi + 1:
                    raise DataError(f"groups must be disjoint and contiguous (gap/overlap at {lo})")
        object.__setattr__(self, "groups", groups)

    @property
    def total(self):
        return sum(d for _, _, d in self.groups)

    def scaled(self, factor):
        return PandemicTable(tuple((lo, hi, d * factor) for lo, hi, d in self.groups))


def load_pandemic_table(path=None):
    """Read ``age_low,age_high,deaths``; an empty ``age_high`` is open-ended.

    With no path, the bundled U.S. 2020 Covid-19 table is returned.
    """
    if path is None:
        text = resources.files("robustlc").joinpath("data/covid_us_2020.csv").read_text()
        lines = text.splitlines()
        source = "covid_us_2020.csv"
    else:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        source = os.fspath(path)
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["age_low", "age_high", "deaths"]:
        raise DataError(f"{source}:1: header must be 'age_low,age_high,deaths'")
    groups = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            lo = int(row[0])
            hi = int(row[1]) if row[1].strip() else None
            groups.append((lo, hi, float(row[2])))
        except (ValueError, IndexError) as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
    return PandemicTable(tuple(groups))


def redistribute_group_deaths(table, reference, ages):
    """Split grouped deaths over single ages proportionally to ``reference``.

    ``reference`` is a per-age vector aligned with ``ages`` (e.g. all-cause
    deaths of the pandemic year). An open-ended top group extends to the
    last age of the panel. Ages outside every group receive zero.
    """
    ages = np.asarray(ages, dtype=int)
    reference = np.asarray(reference, dtype=float)
    if reference.shape != ages.shape:
        raise DataError("reference vector must align with ages")
    if np.any(reference < 0):
        raise DataError("reference vector must be nonnegative")
    out = np.zeros(ages.size)
    for lo, hi, deaths in table.groups:
        top = ages[-1] if hi is None else hi
        if lo < ages[0] or top > ages[-1] or lo > top:
            raise DataError(f"group {lo}-{hi if hi is not None else '+'} outside dataset ages "
                            f"{ages[0]}-{ages[-1]}")
        sel = (ages >= lo) & (ages <= top)
        w = reference[sel]
        if w.sum() <= 0:
            raise DataError(f"all-zero reference within group {lo}-{top}")
        out[sel] = deaths * w / w.sum()
    return out


def inject_pandemic(ds, per_age_deaths, years):
    """Add ``per_age_deaths`` to every year in ``years``; exposures untouched."""
    extra = np.asarray(per_age_deaths, dtype=float)
    if extra.shape != (ds.ages.size,):
        raise DataError("per-age deaths must have one entry per age")
    deaths = ds.deaths.copy()
    for year in sorted(set(years)):
        deaths[:, ds.year_index(year)] += extra
    return ds.with_deaths(deaths)
