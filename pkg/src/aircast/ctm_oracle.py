"""Synthetic ground-truth generator: transport-reaction dynamics on the graph.

Integrates a two-species (PM-like, O3-like) concentration field with
explicit Euler on the station graph: upwind advection along edges,
diffusive exchange through the combinatorial Laplacian (which conserves
mass exactly in closed systems), per-species linear deposition, emission
sources, and a toy photochemistry term producing the O3-like species from
the VOC inventory channel under radiation. The parameterization is a
stand-in for a full chemical transport model; its value is that every
term is verifiable in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ValidationError
from .numerics import Array
from .spatial_graph import Station, SpatialGraph, unit_bearings

X_CHANNELS = ("pm25", "o3")
P_CHANNELS = ("t2m", "d2m", "tp", "sp", "blh", "swr", "u100", "v100")
Q_CHANNELS = ("e_pm25", "e_pm10", "e_nox", "e_voc", "e_nh3", "e_so2")

VOC_INDEX = Q_CHANNELS.index("e_voc")
KMH_PER_MS = 3.6
MAX_OUTFLOW = 0.9  # per-step cap on advected mass fraction leaving a station
SWR_SCALE = 800.0  # W/m^2 at radiation = 1


@dataclass
class OracleConfig:
    """Dynamics parameters plus the exogenous forcing callables.

    The callables map a step index t to that step's forcing: wind_fn ->
    (V, 2) m/s, emission_fn -> (V, 6) inventory frame in ug/m3/h,
    radiation_fn -> scalar in [0, 1]. They must be deterministic.
    """

    initial: Array
    wind_fn: object
    emission_fn: object
    radiation_fn: object
    dt: float = 1.0
    diffusion_k: float = 0.02
    deposition: tuple = (0.05, 0.10)
    reaction_rate: float = 4.0
    # std (m/s) of the AR(1) error separating the recorded wind covariates
    # from the wind that actually drives the dynamics; 0 records truth
    wind_obs_sigma: float = 0.0
    # radiation-gated exchange rate (1/h at radiation 1) between surface
    # pm25 and an unrecorded aloft reservoir; 0 disables the reservoir
    aloft_exchange: float = 0.0
    aloft_deposition: float = 0.01
    # optional t -> (V, 6) multiplier on the emission flux that actually
    # enters the dynamics; the recorded inventory (emission_fn) does not
    # include it, standing in for unreported sources
    emission_event_fn: object = None
    seed: int = 0


@dataclass
class SeriesBundle:
    """Aligned hourly series for one station set.

    X: (steps, V, 2) pollutants, P: (steps, V, 8) meteorology,
    Q: (steps, V, 6) emissions. `clamped_mass` totals concentration
    removed by the nonnegativity clamp during generation.
    """

    timestamps: Array
    station_ids: list
    X: Array
    P: Array
    Q: Array
    clamped_mass: float = 0.0
    excluded: Array = field(default=None)
    filled: Array = field(default=None)

    @property
    def n_steps(self) -> int:
        return self.X.shape[0]

    @property
    def n_stations(self) -> int:
        return self.X.shape[1]

    def validate(self) -> None:
        steps, v = self.X.shape[0], self.X.shape[1]
        if self.X.shape != (steps, v, len(X_CHANNELS)):
            raise ValidationError(f"X must be (steps, V, 2), got {self.X.shape}")
        if self.P.shape != (steps, v, len(P_CHANNELS)):
            raise ValidationError(f"P must be (steps, V, 8), got {self.P.shape}")
        if self.Q.shape != (steps, v, len(Q_CHANNELS)):
            raise ValidationError(f"Q must be (steps, V, 6), got {self.Q.shape}")
        if len(self.timestamps) != steps or len(self.station_ids) != v:
            raise ValidationError("timestamps/station_ids out of step with tensors")
        for name, arr in (("X", self.X), ("P", self.P), ("Q", self.Q)):
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"{name} contains non-finite values")
        if np.any(self.X < 0):
            raise ValidationError("pollutant concentrations must be nonnegative")


def check_stability(cfg: OracleConfig, graph: SpatialGraph) -> None:
    """Explicit Euler needs dt * (k * max_degree + deposition) < 1."""
    if cfg.dt <= 0:
        raise ValidationError(f"dt must be positive, got {cfg.dt}")
    if cfg.diffusion_k < 0 or cfg.reaction_rate < 0 or min(cfg.deposition) < 0:
        raise ValidationError("rates must be nonnegative")
    if not (np.isfinite(cfg.wind_obs_sigma) and cfg.wind_obs_sigma >= 0):
        raise ValidationError(
            f"wind_obs_sigma must be finite and >= 0, got {cfg.wind_obs_sigma}")
    if cfg.aloft_exchange < 0 or cfg.aloft_deposition < 0:
        raise ValidationError("aloft rates must be nonnegative")
    max_degree = float(graph.degree.max()) if graph.n_stations else 0.0
    bound = cfg.dt * (cfg.diffusion_k * max_degree + max(cfg.deposition)
                      + cfg.aloft_exchange)
    if bound >= 1.0:
        raise ValidationError(
            f"unstable configuration: dt*(k*max_degree + deposition + "
            f"aloft_exchange) = {bound:.3f} >= 1")
    if cfg.dt * (cfg.aloft_exchange + cfg.aloft_deposition) >= 1.0:
        raise ValidationError("aloft pool update is unstable at this dt")


def _advection_fractions(graph: SpatialGraph, wind: Array, dt: float,
                         bearings: Array) -> Array:
    """Per-step donor-cell transfer fractions, shape (V, V), row = donor.

    fraction(i -> j) = dt * downwind speed (km/h) / edge length (km),
    i.e. the share of the donor column that traverses the edge in dt.
    Row sums are capped so a station never exports more than MAX_OUTFLOW
    of its mass in one step.
    """
    proj = wind[:, None, 0] * bearings[..., 0] + wind[:, None, 1] * bearings[..., 1]
    d = np.where(graph.distances > 0, graph.distances, 1.0)
    frac = graph.adjacency * np.maximum(proj, 0.0) * (KMH_PER_MS * dt) / d
    out = frac.sum(axis=1)
    over = out > MAX_OUTFLOW
    if np.any(over):
        frac[over] *= (MAX_OUTFLOW / out[over])[:, None]
    return frac


def _surface_tendency(state: Array, cfg: OracleConfig, graph: SpatialGraph,
                      t: int, bearings: Array) -> tuple:
    """Pre-clamp surface update and the radiation value that drove it."""
    wind = np.asarray(cfg.wind_fn(t), dtype=np.float64)
    q = np.asarray(cfg.emission_fn(t), dtype=np.float64)
    if cfg.emission_event_fn is not None:
        q = q * np.asarray(cfg.emission_event_fn(t), dtype=np.float64)
    rad = float(cfg.radiation_fn(t))

    frac = _advection_fractions(graph, wind, cfg.dt, bearings)
    advect = frac.T @ state - frac.sum(axis=1)[:, None] * state

    lap = np.diag(graph.degree) - graph.adjacency  # combinatorial, conserves mass
    diffuse = -cfg.dt * cfg.diffusion_k * (lap @ state)

    source = np.zeros_like(state)
    source[:, 0] = cfg.dt * q[:, 0]
    source[:, 1] = cfg.dt * cfg.reaction_rate * rad * q[:, VOC_INDEX]

    decay = 1.0 - cfg.dt * np.asarray(cfg.deposition)
    return state * decay + advect + diffuse + source, rad


def _clamp_negative(arr: Array, diagnostics: dict) -> Array:
    negative = arr < 0
    if np.any(negative):
        if diagnostics is not None:
            diagnostics["clamped_mass"] = (diagnostics.get("clamped_mass", 0.0)
                                           - float(arr[negative].sum()))
        arr = np.maximum(arr, 0.0)
    return arr


def step(state: Array, cfg: OracleConfig, graph: SpatialGraph, t: int,
         diagnostics: dict = None, bearings: Array = None) -> Array:
    """One explicit Euler update of the (V, 2) concentration field.

    All increments are evaluated at the incoming state (simultaneous
    update). Negative results are clamped to zero and the removed mass is
    accumulated under diagnostics['clamped_mass'] when a dict is given.
    This is the surface-only update; the aloft reservoir, when enabled,
    is handled by step_with_aloft.
    """
    if bearings is None:
        bearings = unit_bearings(graph.stations)
    v = graph.n_stations
    if state.shape != (v, len(X_CHANNELS)):
        raise ValidationError(f"state must be ({v}, 2), got {state.shape}")
    new, _ = _surface_tendency(state, cfg, graph, t, bearings)
    return _clamp_negative(new, diagnostics)


def step_with_aloft(state: Array, aloft: Array, cfg: OracleConfig,
                    graph: SpatialGraph, t: int, diagnostics: dict = None,
                    bearings: Array = None) -> tuple:
    """Surface update coupled to a per-station aloft pm25 reservoir.

    The reservoir trades mass with the surface at rate
    aloft_exchange * radiation(t), so mixing happens in daytime and the
    pools decouple at night; the exchange itself conserves mass. The
    reservoir is not recorded in the bundle, which makes surface pm25
    non-Markov in the observed series: its morning behaviour depends on
    what the reservoir retained from previous days.
    """
    if bearings is None:
        bearings = unit_bearings(graph.stations)
    v = graph.n_stations
    if state.shape != (v, len(X_CHANNELS)):
        raise ValidationError(f"state must be ({v}, 2), got {state.shape}")
    if aloft.shape != (v,):
        raise ValidationError(f"aloft pool must be ({v},), got {aloft.shape}")
    new, rad = _surface_tendency(state, cfg, graph, t, bearings)
    exchange = cfg.dt * cfg.aloft_exchange * rad * (aloft - state[:, 0])
    new[:, 0] += exchange
    new_aloft = aloft * (1.0 - cfg.dt * cfg.aloft_deposition) - exchange
    return (_clamp_negative(new, diagnostics),
            _clamp_negative(new_aloft, diagnostics))


def generate(cfg: OracleConfig, graph: SpatialGraph, steps: int,
             start: str = "2021-01-01T00:00:00") -> SeriesBundle:
    """Roll the dynamics and assemble the full (X, P, Q) bundle.

    Wind, radiation, and emissions are recorded from the config callables;
    the remaining meteorology channels are seeded smooth processes that do
    not feed back into the dynamics. Deterministic per (cfg, graph, steps).
    """
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    check_stability(cfg, graph)
    v = graph.n_stations
    initial = np.asarray(cfg.initial, dtype=np.float64)
    if initial.shape != (v, len(X_CHANNELS)):
        raise ValidationError(f"initial state must be ({v}, 2), got {initial.shape}")
    if np.any(initial < 0) or not np.all(np.isfinite(initial)):
        raise ValidationError("initial state must be finite and nonnegative")

    bearings = unit_bearings(graph.stations)
    diagnostics = {"clamped_mass": 0.0}

    X = np.empty((steps, v, len(X_CHANNELS)))
    Q = np.empty((steps, v, len(Q_CHANNELS)))
    wind = np.empty((steps, v, 2))
    rad = np.empty(steps)

    state = initial.copy()
    # reservoir starts charged to the initial surface level
    aloft = initial[:, 0].copy() if cfg.aloft_exchange > 0 else None
    for t in range(steps):
        X[t] = state
        Q[t] = np.asarray(cfg.emission_fn(t), dtype=np.float64)
        wind[t] = np.asarray(cfg.wind_fn(t), dtype=np.float64)
        rad[t] = float(cfg.radiation_fn(t))
        if t < steps - 1:
            if aloft is None:
                state = step(state, cfg, graph, t, diagnostics, bearings)
            else:
                state, aloft = step_with_aloft(state, aloft, cfg, graph, t,
                                               diagnostics, bearings)

    P = _synthesize_meteorology(steps, v, rad, wind, cfg.seed,
                                cfg.wind_obs_sigma)

    timestamps = (np.datetime64(start, "s")
                  + np.arange(steps) * np.timedelta64(3600, "s"))
    bundle = SeriesBundle(timestamps=timestamps,
                          station_ids=[s.id for s in graph.stations],
                          X=X, P=P, Q=Q,
                          clamped_mass=diagnostics["clamped_mass"])
    bundle.validate()
    return bundle


def _ar1(rng, n: int, tau: float, sigma: float) -> Array:
    """Stationary AR(1) path with decorrelation time tau (steps)."""
    rho = np.exp(-1.0 / tau)
    innov = sigma * np.sqrt(1.0 - rho * rho)
    x = np.empty(n)
    x[0] = sigma * rng.standard_normal()
    eps = rng.standard_normal(n)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + innov * eps[t]
    return x


def _synthesize_meteorology(steps: int, v: int, rad: Array, wind: Array,
                            seed: int, wind_obs_sigma: float = 0.0) -> Array:
    """Assemble the 8 P channels; only swr/u100/v100 touch the dynamics.

    The recorded u100/v100 carry a slowly varying AR(1) error of std
    wind_obs_sigma shared by all stations, standing in for the gap between
    a meteorological forecast and the wind the pollutants actually felt.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA1]))
    hour = np.arange(steps) % 24
    diurnal = np.sin(2.0 * np.pi * (hour - 14.0) / 24.0)

    station_offset = rng.normal(0.0, 1.0, v)
    t2m = (12.0 + 8.0 * diurnal[:, None] + station_offset[None, :]
           + _ar1(rng, steps, 24.0, 1.5)[:, None])
    d2m = t2m - (3.0 + np.abs(_ar1(rng, steps, 36.0, 1.0)))[:, None]
    shower = _ar1(rng, steps, 12.0, 1.0)
    tp = np.where(shower > 1.2, (shower - 1.2) * 2.0, 0.0)[:, None] \
        * rng.uniform(0.5, 1.5, v)[None, :]
    sp = 1013.0 + _ar1(rng, steps, 72.0, 2.0)[:, None] \
        + 0.3 * station_offset[None, :]
    blh = (250.0 + 1100.0 * rad[:, None] * rng.uniform(0.9, 1.1, v)[None, :]
           + 60.0 * _ar1(rng, steps, 6.0, 1.0)[:, None])
    blh = np.maximum(blh, 50.0)
    swr = SWR_SCALE * rad[:, None] * np.ones((1, v))

    P = np.empty((steps, v, len(P_CHANNELS)))
    P[..., 0] = t2m
    P[..., 1] = d2m
    P[..., 2] = tp
    P[..., 3] = sp
    P[..., 4] = blh
    P[..., 5] = swr
    if wind_obs_sigma > 0.0:
        err_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB2]))
        u_err = _ar1(err_rng, steps, 18.0, wind_obs_sigma)
        v_err = _ar1(err_rng, steps, 18.0, wind_obs_sigma)
        P[..., 6] = wind[..., 0] + u_err[:, None]
        P[..., 7] = wind[..., 1] + v_err[:, None]
    else:
        P[..., 6] = wind[..., 0]
        P[..., 7] = wind[..., 1]
    return P


# ---------------------------------------------------------------------------
# default scenario
# ---------------------------------------------------------------------------


def demo_stations(n: int = 10, seed: int = 0) -> list:
    """Deterministic station layout in a ~2 degree box (N China plain-ish)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x57]))
    stations = []
    for i in range(n):
        stations.append(Station(id=f"st{i:02d}",
                                lat=float(rng.uniform(38.8, 40.6)),
                                lon=float(rng.uniform(115.4, 117.6))))
    return stations


def _double_peak(hour_local: Array, morning: float, evening: float,
                 width: float, evening_share: float) -> Array:
    """Diurnal emission shape with distinct morning and evening maxima."""
    def bump(center):
        d = np.minimum(np.abs(hour_local - center), 24.0 - np.abs(hour_local - center))
        return np.exp(-0.5 * (d / width) ** 2)

    return bump(morning) + evening_share * bump(evening)


def synthetic_scenario(graph: SpatialGraph, steps: int, seed: int = 0,
                       wind_speed: float = 3.0, emission_scale: float = 1.0,
                       local_utc_offset: int = 8,
                       wind_obs_sigma: float = 0.2,
                       aloft_exchange: float = 0.30,
                       event_sigma: float = 0.0) -> OracleConfig:
    """Build an OracleConfig with seeded, precomputed forcing trajectories.

    Emissions follow morning/evening double peaks with slow day-to-day
    amplitude drift; wind is a shared AR(1) regime plus station-level
    perturbations; radiation is a clear-sky arc under AR(1) cloudiness.
    The multi-day drift terms matter: they are what makes tomorrow differ
    from today, so a forecaster can beat persistence at 24 h lead.

    Two defaults keep the recorded series from fully determining the next
    step, the way real station feeds do: the recorded wind carries a slow
    AR(1) error (wind_obs_sigma) relative to the wind that moved the
    mass, and surface pm25 trades mass with an unrecorded aloft reservoir
    (aloft_exchange) whenever the sun mixes the boundary layer. Both make
    recent station history informative beyond the covariates alone. A
    third, stronger mechanism is off by default: event_sigma > 0 scales
    the pm25 flux entering the air by an unrecorded per-station AR(1)
    event factor, standing in for unreported sources.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C]))
    v = graph.n_stations
    hour_local = (np.arange(steps) + local_utc_offset) % 24

    # radiation: clear-sky half-sine, cloud factor in [0.3, 1]
    clear = np.maximum(0.0, np.sin(np.pi * (hour_local - 6.0) / 12.0))
    cloud = 0.3 + 0.7 / (1.0 + np.exp(-_ar1(rng, steps, 30.0, 1.8)))
    radiation = clear * cloud

    # wind: regional AR(1) regime, per-station spread
    u = (wind_speed * _ar1(rng, steps, 36.0, 1.0)[:, None]
         + 0.3 * wind_speed * np.vstack([_ar1(rng, steps, 12.0, 1.0)
                                         for _ in range(v)]).T)
    w = (wind_speed * _ar1(rng, steps, 36.0, 1.0)[:, None]
         + 0.3 * wind_speed * np.vstack([_ar1(rng, steps, 12.0, 1.0)
                                         for _ in range(v)]).T)
    wind = np.stack([u, w], axis=-1)

    # emission inventories, ug/m3/h; traffic-driven channels drop on the
    # two rest days of each week, which breaks same-hour-yesterday
    # persistence across the boundary days
    pm_base = rng.uniform(1.5, 4.0, v)
    voc_base = rng.uniform(2.0, 5.0, v)
    pm_drift = np.exp(0.35 * _ar1(rng, steps, 48.0, 1.0))
    voc_drift = np.exp(0.30 * _ar1(rng, steps, 60.0, 1.0))
    day_of_week = ((np.arange(steps) + local_utc_offset) // 24) % 7
    # rest-day factor re-normalized so the weekly mean stays near 1
    weekly = np.where(day_of_week >= 5, 0.55, 1.13)
    traffic = (0.25 + _double_peak(hour_local, 8.0, 19.0, 1.8, 0.85)) * weekly
    evaporative = (0.25 + _double_peak(hour_local, 9.0, 15.0, 2.5, 0.9)) \
        * (0.7 + 0.3 * weekly)

    Q = np.empty((steps, v, len(Q_CHANNELS)))
    e_pm25 = emission_scale * pm_base[None, :] * traffic[:, None] * pm_drift[:, None]
    e_voc = emission_scale * voc_base[None, :] * evaporative[:, None] * voc_drift[:, None]
    Q[..., 0] = e_pm25
    Q[..., 1] = 1.6 * e_pm25 * rng.uniform(0.95, 1.05, (steps, v))
    Q[..., 2] = (0.3 + _double_peak(hour_local, 8.0, 18.5, 1.5, 0.9))[:, None] \
        * rng.uniform(1.0, 3.0, v)[None, :]
    Q[..., 3] = e_voc
    Q[..., 4] = (0.2 + _double_peak(hour_local, 7.0, 7.0, 2.0, 0.0))[:, None] \
        * rng.uniform(0.5, 1.5, v)[None, :]
    Q[..., 5] = rng.uniform(0.5, 2.0, v)[None, :] * np.ones((steps, 1))

    initial = np.stack([rng.uniform(25.0, 45.0, v), rng.uniform(20.0, 40.0, v)],
                       axis=-1)

    # unreported pm25 source events, per station, not in the inventory
    event_fn = None
    if event_sigma > 0:
        events = np.ones((steps, v, len(Q_CHANNELS)))
        events[..., 0] = np.exp(event_sigma * np.vstack(
            [_ar1(rng, steps, 48.0, 1.0) for _ in range(v)]).T)
        event_fn = lambda t: events[t]

    return OracleConfig(initial=initial,
                        wind_fn=lambda t: wind[t],
                        emission_fn=lambda t: Q[t],
                        radiation_fn=lambda t: radiation[t],
                        wind_obs_sigma=wind_obs_sigma,
                        aloft_exchange=aloft_exchange,
                        emission_event_fn=event_fn,
                        seed=seed)
