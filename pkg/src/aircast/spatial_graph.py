"""Station graph construction: haversine distances, adjacency, Laplacian.

Stations within a distance threshold (default 200 km) are connected by
unweighted, undirected edges. The message-passing operator downstream is
the symmetric normalized Laplacian L = I - D^{-1/2} A D^{-1/2}; isolated
stations keep an identity row so they pass their own state through.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .numerics import Array, Tensor, matmul

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class Station:
    id: str
    lat: float
    lon: float


def _check_station(s: Station) -> None:
    if not (-90.0 <= s.lat <= 90.0):
        raise ValidationError(f"station {s.id!r}: latitude {s.lat} out of [-90, 90]")
    if not (-180.0 <= s.lon <= 180.0):
        raise ValidationError(f"station {s.id!r}: longitude {s.lon} out of [-180, 180]")


@dataclass(frozen=True)
class SpatialGraph:
    """Immutable station graph. `degree` holds the diagonal of D."""

    stations: tuple
    adjacency: Array
    degree: Array
    laplacian: Array
    distances: Array
    threshold_km: float

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    def station_ids(self) -> list:
        return [s.id for s in self.stations]


def haversine_km(a: Station, b: Station) -> float:
    """Great-circle distance on a 6371 km sphere."""
    _check_station(a)
    _check_station(b)
    lat1, lon1, lat2, lon2 = map(np.radians, (a.lat, a.lon, b.lat, b.lon))
    s = (np.sin((lat2 - lat1) / 2.0) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2)
    return float(2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(s)))


def distance_matrix(stations) -> Array:
    """Pairwise haversine distances, shape (V, V), zero diagonal."""
    lat = np.radians([s.lat for s in stations])
    lon = np.radians([s.lon for s in stations])
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    s = (np.sin(dlat / 2.0) ** 2
         + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2.0) ** 2)
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))
    np.fill_diagonal(d, 0.0)
    return d


def normalized_laplacian(adjacency: Array) -> Array:
    degree = adjacency.sum(axis=1)
    inv_sqrt = np.divide(1.0, np.sqrt(degree),
                         out=np.zeros_like(degree, dtype=np.float64),
                         where=degree > 0)
    n = adjacency.shape[0]
    return np.eye(n) - inv_sqrt[:, None] * adjacency * inv_sqrt[None, :]


def build_graph(stations, threshold_km: float = 200.0) -> SpatialGraph:
    stations = tuple(stations)
    if not stations:
        raise ValidationError("graph needs at least one station")
    if threshold_km <= 0:
        raise ValidationError(f"threshold_km must be positive, got {threshold_km}")
    ids = [s.id for s in stations]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValidationError(f"duplicate station ids: {', '.join(dupes)}")
    for s in stations:
        _check_station(s)
    d = distance_matrix(stations)
    adjacency = ((d > 0.0) & (d <= threshold_km)).astype(np.float64)
    # coincident coordinates give d=0 off-diagonal; treat as connected anyway
    coincident = (d == 0.0)
    np.fill_diagonal(coincident, False)
    adjacency[coincident] = 1.0
    degree = adjacency.sum(axis=1)
    return SpatialGraph(stations=stations, adjacency=adjacency, degree=degree,
                        laplacian=normalized_laplacian(adjacency),
                        distances=d, threshold_km=float(threshold_km))


def apply_laplacian(graph: SpatialGraph, h: Tensor) -> Tensor:
    """L h with gradient flow through h."""
    if h.ndim != 2 or h.shape[0] != graph.n_stations:
        raise DimensionError(
            f"expected ({graph.n_stations}, d) features, got {h.shape}")
    return matmul(Tensor(graph.laplacian), h)


def unit_bearings(stations) -> Array:
    """Local east/north unit vectors from station i toward station j.

    Shape (V, V, 2) with zeros on the diagonal. Uses a tangent-plane
    approximation, which is adequate at the sub-threshold ranges where
    it is consumed (wind projection for edge transport).
    """
    lat = np.radians([s.lat for s in stations])
    lon = np.radians([s.lon for s in stations])
    mean_lat = (lat[:, None] + lat[None, :]) / 2.0
    de = EARTH_RADIUS_KM * np.cos(mean_lat) * (lon[None, :] - lon[:, None])
    dn = EARTH_RADIUS_KM * (lat[None, :] - lat[:, None])
    norm = np.sqrt(de * de + dn * dn)
    safe = np.where(norm > 0, norm, 1.0)
    out = np.stack([de / safe, dn / safe], axis=-1)
    out[norm == 0] = 0.0
    return out


# ---------------------------------------------------------------------------
# station CSV
# ---------------------------------------------------------------------------

STATION_HEADER = ["id", "lat", "lon"]


def load_stations(path) -> list:
    # missing/unreadable file stays an OSError; only content problems
    # become validation errors
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != STATION_HEADER:
            raise ValidationError(
                f"{path}: expected header {','.join(STATION_HEADER)!r}, "
                f"got {header!r}")
        stations = []
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}: malformed row {row!r}")
            try:
                st = Station(id=row[0], lat=float(row[1]), lon=float(row[2]))
            except ValueError as exc:
                raise ValidationError(f"{path}: bad coordinate in {row!r}") from exc
            _check_station(st)
            stations.append(st)
    if not stations:
        raise ValidationError(f"{path}: no stations")
    return stations


def write_stations(path, stations) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATION_HEADER)
        for s in stations:
            writer.writerow([s.id, repr(float(s.lat)), repr(float(s.lon))])
