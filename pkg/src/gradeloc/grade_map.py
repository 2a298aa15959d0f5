"""Road elevation profiles and position-indexed grade maps.

Grade is stored as ``sin(theta)`` (rise over arc length) so that it can be fed
straight into ``asin`` by the measurement model.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

EARTH_RADIUS_M = 6371008.8


class MapDataError(ValueError):
    """Raised when elevation or grade data is malformed or violates invariants."""


@dataclass(frozen=True)
class GeoSample:
    latitude: float
    longitude: float
    elevation: float
    resolution: float | None = None

    def __post_init__(self):
        vals = [self.latitude, self.longitude, self.elevation]
        if not all(math.isfinite(v) for v in vals):
            raise MapDataError(f"non-finite geo sample {self}")
        if abs(self.latitude) > 90.0:
            raise MapDataError(f"latitude {self.latitude} outside [-90, 90]")
        if abs(self.longitude) > 180.0:
            raise MapDataError(f"longitude {self.longitude} outside [-180, 180]")


@dataclass(frozen=True)
class ElevationProfile:
    """Elevation samples ordered by arc position along the route."""

    arc: np.ndarray
    elevation: np.ndarray
    source_resolution: float = 0.0

    def __post_init__(self):
        arc = np.asarray(self.arc, dtype=float)
        z = np.asarray(self.elevation, dtype=float)
        if arc.ndim != 1 or arc.shape != z.shape:
            raise MapDataError("arc and elevation must be 1-D arrays of equal length")
        if arc.size < 2:
            raise MapDataError("need >= 2 samples")
        if not (np.all(np.isfinite(arc)) and np.all(np.isfinite(z))):
            raise MapDataError("profile contains non-finite values")
        if np.any(np.diff(arc) <= 0):
            raise MapDataError("arc positions must be strictly increasing")
        object.__setattr__(self, "arc", arc)
        object.__setattr__(self, "elevation", z)

    def __len__(self):
        return self.arc.size


@dataclass(frozen=True)
class GradeMap:
    """Piecewise-linear grade p(s) over knots, clamped outside the knot range."""

    arc: np.ndarray
    grade: np.ndarray
    _slopes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        arc = np.asarray(self.arc, dtype=float)
        p = np.asarray(self.grade, dtype=float)
        if arc.ndim != 1 or arc.shape != p.shape:
            raise MapDataError("arc and grade must be 1-D arrays of equal length")
        if arc.size < 1:
            raise MapDataError("grade map needs at least one knot")
        if not (np.all(np.isfinite(arc)) and np.all(np.isfinite(p))):
            raise MapDataError("grade map contains non-finite values")
        if np.any(np.diff(arc) <= 0):
            raise MapDataError("knot positions must be strictly increasing")
        if np.any(np.abs(p) >= 1.0):
            raise MapDataError("|grade| must be < 1 at every knot")
        arc.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "arc", arc)
        object.__setattr__(self, "grade", p)
        slopes = np.diff(p) / np.diff(arc) if arc.size > 1 else np.zeros(0)
        slopes.setflags(write=False)
        object.__setattr__(self, "_slopes", slopes)

    @property
    def start(self) -> float:
        return float(self.arc[0])

    @property
    def end(self) -> float:
        return float(self.arc[-1])

    @property
    def length(self) -> float:
        return self.end - self.start

    def grade_at(self, s):
        """Interpolated grade at position(s) ``s``; clamps outside the map."""
        out = np.interp(s, self.arc, self.grade)
        return float(out) if np.ndim(out) == 0 else out

    def grade_slope_at(self, s):
        """dp/ds of the interpolant.

        At a knot the right-hand segment's slope is returned. Outside the map,
        and on single-knot maps, the slope is zero (the interpolant is flat).
        """
        if np.ndim(s) == 0:
            s = float(s)
            if self._slopes.size == 0 or not self.arc[0] <= s < self.arc[-1]:
                return 0.0
            i = int(np.searchsorted(self.arc, s, side="right")) - 1
            return float(self._slopes[min(i, self._slopes.size - 1)])
        s_arr = np.asarray(s, dtype=float)
        if self._slopes.size == 0:
            out = np.zeros_like(s_arr)
        else:
            idx = np.searchsorted(self.arc, s_arr, side="right") - 1
            inside = (s_arr >= self.arc[0]) & (s_arr < self.arc[-1])
            idx = np.clip(idx, 0, self._slopes.size - 1)
            out = np.where(inside, self._slopes[idx], 0.0)
        return float(out) if out.ndim == 0 else out

    def theta_at(self, s):
        """Road inclination in radians."""
        return np.arcsin(self.grade_at(s))

    def max_abs_slope(self) -> float:
        return float(np.max(np.abs(self._slopes))) if self._slopes.size else 0.0

    def shifted(self, offset: float) -> "GradeMap":
        return GradeMap(self.arc + offset, self.grade.copy())


def grade_at(gmap: GradeMap, s):
    return gmap.grade_at(s)


def grade_slope_at(gmap: GradeMap, s):
    return gmap.grade_slope_at(s)


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; the window shrinks symmetrically at the edges."""
    if window < 1 or window % 2 == 0:
        raise MapDataError(f"smoothing window must be an odd integer >= 1, got {window}")
    if window == 1:
        return np.array(x, dtype=float)
    half = window // 2
    n = len(x)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    out = np.empty(n)
    for i in range(n):
        h = min(half, i, n - 1 - i)
        out[i] = (csum[i + h + 1] - csum[i - h]) / (2 * h + 1)
    return out


def from_elevation(profile: ElevationProfile, smoothing_window: int = 5) -> GradeMap:
    """Differentiate an elevation profile into a grade map.

    Interior knots use centered differences, the two ends one-sided ones.
    Knot positions are the input sample positions.
    """
    n = len(profile)
    if smoothing_window > n:
        raise MapDataError(f"smoothing window {smoothing_window} exceeds {n} samples")
    s, z = profile.arc, profile.elevation
    grade = np.gradient(z, s, edge_order=1)
    grade = moving_average(grade, smoothing_window)
    bad = np.flatnonzero(np.abs(grade) >= 1.0)
    if bad.size:
        raise MapDataError(
            f"non-traversable grade {grade[bad[0]]:.3f} at arc {s[bad[0]]:.1f} m"
        )
    return GradeMap(s.copy(), grade)


def haversine(lat1, lon1, lat2, lon2, radius: float = EARTH_RADIUS_M):
    """Great-circle distance in metres between points given in degrees."""
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def from_geo_samples(points: Sequence[GeoSample]) -> ElevationProfile:
    if len(points) < 2:
        raise MapDataError("need >= 2 samples")
    lat = np.array([p.latitude for p in points])
    lon = np.array([p.longitude for p in points])
    d = haversine(lat[:-1], lon[:-1], lat[1:], lon[1:])
    zero = np.flatnonzero(d <= 0.0)
    if zero.size:
        raise MapDataError(f"duplicate consecutive coordinates at records {zero[0]} and {zero[0] + 1}")
    arc = np.concatenate([[0.0], np.cumsum(d)])
    res = [p.resolution for p in points if p.resolution is not None]
    return ElevationProfile(arc, np.array([p.elevation for p in points]), max(res) if res else 0.0)


def load_elevation_json(path) -> list[GeoSample]:
    """Read a pre-fetched elevation-API response.

    Accepts either a bare JSON array or an object with a ``results`` array; each
    record needs ``lat``, ``lng``, ``elevation`` and may carry ``resolution``.
    Nested ``location: {lat, lng}`` records are accepted too.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MapDataError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(data, dict):
        data = data.get("results", [])
    if not isinstance(data, list):
        raise MapDataError(f"{path}: expected a JSON array of samples")
    out = []
    for i, rec in enumerate(data):
        if not isinstance(rec, dict):
            raise MapDataError(f"{path}: record {i} is not an object")
        loc = rec.get("location", rec)
        try:
            lat, lng = float(loc["lat"]), float(loc["lng"])
            elev = float(rec["elevation"])
        except KeyError as exc:
            raise MapDataError(f"{path}: record {i} missing field {exc.args[0]!r}") from exc
        except (TypeError, ValueError) as exc:
            raise MapDataError(f"{path}: record {i} has a non-numeric field") from exc
        res = rec.get("resolution")
        try:
            out.append(GeoSample(lat, lng, elev, None if res is None else float(res)))
        except MapDataError as exc:
            raise MapDataError(f"{path}: record {i}: {exc}") from exc
    if len(out) < 2:
        raise MapDataError(f"{path}: need >= 2 samples, got {len(out)}")
    return out


def _read_csv_columns(path, columns: Iterable[str]) -> dict[str, np.ndarray]:
    columns = list(columns)
    values: dict[str, list[float]] = {c: [] for c in columns}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in columns if c not in (reader.fieldnames or [])]
        if missing:
            raise MapDataError(f"{path}: missing column(s) {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            for c in columns:
                try:
                    values[c].append(float(row[c]))
                except (TypeError, ValueError) as exc:
                    raise MapDataError(f"{path}:{lineno}: bad value for {c!r}: {row[c]!r}") from exc
    return {c: np.array(v) for c, v in values.items()}


def load_profile_csv(path) -> ElevationProfile:
    cols = _read_csv_columns(path, ["arc_m", "elevation_m"])
    if cols["arc_m"].size < 2:
        raise MapDataError(f"{path}: need >= 2 samples, got {cols['arc_m'].size}")
    try:
        return ElevationProfile(cols["arc_m"], cols["elevation_m"])
    except MapDataError as exc:
        raise MapDataError(f"{path}: {exc}") from exc


def load_grade_csv(path) -> GradeMap:
    cols = _read_csv_columns(path, ["arc_m", "grade"])
    try:
        return GradeMap(cols["arc_m"], cols["grade"])
    except MapDataError as exc:
        raise MapDataError(f"{path}: {exc}") from exc


def save_grade_csv(gmap: GradeMap, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["arc_m", "grade"])
        for s, p in zip(gmap.arc, gmap.grade):
            w.writerow([repr(float(s)), repr(float(p))])


def save_profile_csv(profile: ElevationProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["arc_m", "elevation_m"])
        for s, z in zip(profile.arc, profile.elevation):
            w.writerow([repr(float(s)), repr(float(z))])


def _altitude_poly(coeffs: Sequence[float], length: float, basis: str):
    if basis == "power":
        return np.polynomial.Polynomial(coeffs)
    if basis == "chebyshev":
        return np.polynomial.Chebyshev(coeffs, domain=[0.0, length])
    raise MapDataError(f"unknown polynomial basis {basis!r}")


def polynomial_road(coeffs: Sequence[float], length: float, ds: float = 1.0,
                    basis: str = "power") -> GradeMap:
    """Grade map of a road whose altitude is a polynomial in arc position.

    With ``basis="power"``, ``z(s) = sum(c_i * s**i)``; with ``"chebyshev"``
    the coefficients multiply Chebyshev polynomials on ``[0, length]``, which
    keeps high-degree profiles well conditioned. Since ``s`` is arc length
    the grade is the analytic ``dz/ds``. Knots are placed every ``ds`` metres.
    """
    if length <= 0 or ds <= 0:
        raise MapDataError("length and ds must be positive")
    n = max(1, int(round(length / ds)))
    s = np.linspace(0.0, length, n + 1)
    grade = _altitude_poly(coeffs, length, basis).deriv()(s)
    if np.any(np.abs(grade) >= 1.0):
        raise MapDataError("analytic slope exceeds the traversable bound |dz/ds| < 1")
    return GradeMap(s, grade)


def polynomial_profile(coeffs: Sequence[float], length: float, ds: float = 1.0,
                       basis: str = "power") -> ElevationProfile:
    n = max(1, int(round(length / ds)))
    s = np.linspace(0.0, length, n + 1)
    return ElevationProfile(s, _altitude_poly(coeffs, length, basis)(s), ds)


def sinusoid_road(length: float, amplitudes: Sequence[float], wavelengths: Sequence[float],
                  phases: Sequence[float] | None = None, ds: float = 1.0) -> GradeMap:
    """Rolling hills: grade ``sum(A_i * cos(2*pi*s/L_i + phi_i))``."""
    if phases is None:
        phases = [0.0] * len(amplitudes)
    if not len(amplitudes) == len(wavelengths) == len(phases):
        raise MapDataError("amplitudes, wavelengths and phases must have equal length")
    n = max(1, int(round(length / ds)))
    s = np.linspace(0.0, length, n + 1)
    grade = np.zeros_like(s)
    for a, lam, phi in zip(amplitudes, wavelengths, phases):
        grade += a * np.cos(2.0 * np.pi * s / lam + phi)
    return GradeMap(s, grade)
