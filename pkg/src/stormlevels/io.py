"""Station and observation CSV ingestion, validation and output."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import DEFAULT_TERMS, FitData

MIN_OBS_WARN = 18
MIN_OBS = 2
EARTH_RADIUS_KM = 6371.0088
COORD_MODES = ("planar", "lonlat")


class ValidationError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class StationSet:
    ids: list
    coords: np.ndarray              # as given: planar x/y or lon/lat degrees
    covariates: dict                # name -> N values
    years: np.ndarray
    y: np.ndarray                   # len(years) x N, NaN where missing
    coord_mode: str = "planar"
    warnings: list = field(default_factory=list)

    @property
    def sites(self) -> np.ndarray:
        """Planar coordinates used for every distance computation (km in lonlat mode)."""
        if self.coord_mode == "planar":
            return self.coords
        return project_lonlat(self.coords)

    @property
    def n_obs(self) -> np.ndarray:
        return np.sum(~np.isnan(self.y), axis=0)

    def to_fitdata(self, terms: dict | None = None) -> FitData:
        return FitData.from_arrays(self.y, self.sites, self.covariates, terms or DEFAULT_TERMS,
                                   self.ids)


def great_circle_km(lonlat_a, lonlat_b) -> np.ndarray:
    """Haversine distances in km between rows of two lon/lat arrays (degrees)."""
    a = np.radians(np.atleast_2d(lonlat_a))
    b = np.radians(np.atleast_2d(lonlat_b))
    dlon = b[None, :, 0] - a[:, None, 0]
    dlat = b[None, :, 1] - a[:, None, 1]
    h = np.sin(dlat / 2) ** 2 + np.cos(a[:, None, 1]) * np.cos(b[None, :, 1]) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def project_lonlat(lonlat, center=None) -> np.ndarray:
    """Azimuthal equidistant projection (km) about ``center`` (default: centroid).

    Distances through the center are exact great-circle distances; over a few
    degrees all pairwise distances agree with great-circle km to well under 0.1%.
    """
    ll = np.radians(np.atleast_2d(np.asarray(lonlat, float)))
    c = np.radians(np.mean(np.atleast_2d(lonlat), axis=0) if center is None else center)
    lon, lat = ll[:, 0] - c[0], ll[:, 1]
    cos_c = np.sin(c[1]) * np.sin(lat) + np.cos(c[1]) * np.cos(lat) * np.cos(lon)
    ang = np.arccos(np.clip(cos_c, -1.0, 1.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(ang > 1e-12, ang / np.sin(ang), 1.0)
    x = k * np.cos(lat) * np.sin(lon)
    y = k * (np.cos(c[1]) * np.sin(lat) - np.sin(c[1]) * np.cos(lat) * np.cos(lon))
    return EARTH_RADIUS_KM * np.column_stack([x, y])


def _read_rows(path, required):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing column(s) {', '.join(missing)}")
        # data rows start on line 2
        return header, [(i + 2, row) for i, row in enumerate(reader)]


def _number(value, path, line, col) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{path}: row {line}: column {col!r} is not numeric: {value!r}") \
            from None
    if not math.isfinite(v):
        raise ValidationError(f"{path}: row {line}: column {col!r} is not finite: {value!r}")
    return v


def ingest(stations_path, observations_path, coords: str = "planar",
           min_stations: int = 2) -> StationSet:
    """Read ``id,x,y,cov_*`` stations and ``id,year,value`` observations.

    Stations with fewer than 18 observations trigger a warning; fewer than 2 is an error.
    """
    if coords not in COORD_MODES:
        raise ValidationError(f"coordinate mode must be one of {COORD_MODES}")
    header, rows = _read_rows(stations_path, ("id", "x", "y"))
    cov_names = [c for c in header if c.startswith("cov_")]
    ids, xy, covs = [], [], {c: [] for c in cov_names}
    seen = {}
    for line, row in rows:
        sid = (row["id"] or "").strip()
        if not sid:
            raise ValidationError(f"{stations_path}: row {line}: empty station id")
        if sid in seen:
            raise ValidationError(f"{stations_path}: row {line}: duplicate station id {sid!r} "
                                  f"(first on row {seen[sid]})")
        seen[sid] = line
        ids.append(sid)
        xy.append([_number(row["x"], stations_path, line, "x"),
                   _number(row["y"], stations_path, line, "y")])
        for c in cov_names:
            covs[c].append(_number(row[c], stations_path, line, c))
    if len(ids) < min_stations:
        raise ValidationError(f"{stations_path}: need at least {min_stations} station(s)")
    xy = np.array(xy, float)
    if coords == "lonlat" and (np.any(np.abs(xy[:, 1]) > 90) or np.any(np.abs(xy[:, 0]) > 360)):
        raise ValidationError(f"{stations_path}: lon/lat values out of range")

    _, obs_rows = _read_rows(observations_path, ("id", "year", "value"))
    index = {sid: j for j, sid in enumerate(ids)}
    entries = {}
    for line, row in obs_rows:
        sid = (row["id"] or "").strip()
        if sid not in index:
            raise ValidationError(f"{observations_path}: row {line}: unknown station id {sid!r}")
        year = _number(row["year"], observations_path, line, "year")
        if year != int(year):
            raise ValidationError(f"{observations_path}: row {line}: year must be an integer")
        key = (sid, int(year))
        if key in entries:
            raise ValidationError(f"{observations_path}: row {line}: duplicate observation for "
                                  f"station {sid!r} in year {int(year)} "
                                  f"(first on row {entries[key][0]})")
        entries[key] = (line, _number(row["value"], observations_path, line, "value"))
    years = np.array(sorted({k[1] for k in entries}), dtype=np.int64)
    yidx = {yr: i for i, yr in enumerate(years)}
    y = np.full((len(years), len(ids)), np.nan)
    for (sid, yr), (_, v) in entries.items():
        y[yidx[yr], index[sid]] = v
    n_obs = np.sum(~np.isnan(y), axis=0)
    msgs = []
    for sid, n in zip(ids, n_obs):
        if n < MIN_OBS:
            raise ValidationError(f"station {sid!r} has {n} observation(s); at least {MIN_OBS} "
                                  "are required")
        if n < MIN_OBS_WARN:
            msg = f"station {sid!r} has only {n} observations (fewer than {MIN_OBS_WARN})"
            msgs.append(msg)
            warnings.warn(msg, stacklevel=2)
    return StationSet(ids, xy, {c: np.array(v) for c, v in covs.items()}, years, y, coords, msgs)


def read_grid(path, coords: str = "planar"):
    """Prediction grid with ``x,y`` and optional ``cov_*`` columns; returns (coords, covariates)."""
    header, rows = _read_rows(path, ("x", "y"))
    cov_names = [c for c in header if c.startswith("cov_")]
    xy, covs = [], {c: [] for c in cov_names}
    for line, row in rows:
        xy.append([_number(row["x"], path, line, "x"), _number(row["y"], path, line, "y")])
        for c in cov_names:
            covs[c].append(_number(row[c], path, line, c))
    if not xy:
        raise ValidationError(f"{path}: grid is empty")
    return np.array(xy, float), {c: np.array(v) for c, v in covs.items()}


def _fmt(v) -> str:
    return repr(float(v))


def write_stations(path, ids, coords, covariates=None):
    covariates = covariates or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y", *covariates])
        for j, sid in enumerate(ids):
            w.writerow([sid, _fmt(coords[j, 0]), _fmt(coords[j, 1]),
                        *(_fmt(v[j]) for v in covariates.values())])


def write_observations(path, ids, years, y):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "year", "value"])
        for j, sid in enumerate(ids):
            for i, yr in enumerate(years):
                if not np.isnan(y[i, j]):
                    w.writerow([sid, int(yr), _fmt(y[i, j])])


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()
