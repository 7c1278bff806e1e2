"""Series I/O, normalization, chronological splits, and window cutting.

The on-disk form is a long CSV (timestamp,station_id,kind,channel,value)
holding all three series kinds; values round-trip exactly because they
are written with repr(). Gaps up to 3 hours are forward-filled and
flagged; longer gaps mark the affected steps as excluded, and no training
window may touch an excluded step.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .ctm_oracle import P_CHANNELS, Q_CHANNELS, X_CHANNELS, SeriesBundle
from .errors import ValidationError

SERIES_HEADER = ["timestamp", "station_id", "kind", "channel", "value"]
MAX_FFILL_STEPS = 3

_KIND_CHANNELS = {"X": X_CHANNELS, "P": P_CHANNELS, "Q": Q_CHANNELS}


def _format_ts(ts: np.datetime64) -> str:
    return np.datetime_as_string(ts, unit="s") + "Z"


def write_bundle(path, bundle: SeriesBundle) -> None:
    """Serialize a bundle to the long CSV format, fixed row order."""
    arrays = {"X": bundle.X, "P": bundle.P, "Q": bundle.Q}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SERIES_HEADER)
        for t in range(bundle.n_steps):
            ts = _format_ts(bundle.timestamps[t])
            for s, sid in enumerate(bundle.station_ids):
                for kind in ("X", "P", "Q"):
                    arr = arrays[kind]
                    for c, channel in enumerate(_KIND_CHANNELS[kind]):
                        writer.writerow([ts, sid, kind, channel,
                                         repr(float(arr[t, s, c]))])


def load_bundle(path, station_ids=None) -> SeriesBundle:
    """Load a long CSV into aligned tensors.

    Station order follows `station_ids` when given (normally the graph
    order); otherwise first-appearance order. Missing hours inside the
    span become NaN gaps, then forward-fill and exclusion rules apply.
    """
    rows = _read_rows(path)
    timestamps, ts_index = _build_timeline(rows, path)
    sids = _resolve_stations(rows, station_ids, path)
    sid_index = {sid: i for i, sid in enumerate(sids)}

    steps, v = len(timestamps), len(sids)
    arrays = {"X": np.full((steps, v, len(X_CHANNELS)), np.nan),
              "P": np.full((steps, v, len(P_CHANNELS)), np.nan),
              "Q": np.full((steps, v, len(Q_CHANNELS)), np.nan)}
    chan_index = {kind: {c: i for i, c in enumerate(chs)}
                  for kind, chs in _KIND_CHANNELS.items()}

    for ts, sid, kind, channel, value in rows:
        arr = arrays[kind]
        t = ts_index[ts]
        s = sid_index[sid]
        c = chan_index[kind].get(channel)
        if c is None:
            raise ValidationError(f"{path}: unknown channel {channel!r} for kind {kind}")
        if not np.isnan(arr[t, s, c]):
            raise ValidationError(
                f"{path}: duplicate row for {ts} {sid} {kind}/{channel}")
        arr[t, s, c] = value

    filled = np.zeros(steps, dtype=bool)
    excluded = np.zeros(steps, dtype=bool)
    for arr in arrays.values():
        _ffill_inplace(arr, filled, excluded)

    return SeriesBundle(timestamps=timestamps, station_ids=list(sids),
                        X=arrays["X"], P=arrays["P"], Q=arrays["Q"],
                        excluded=excluded, filled=filled)


def _read_rows(path):
    # missing/unreadable file stays an OSError; only content problems
    # become validation errors
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SERIES_HEADER:
            raise ValidationError(
                f"{path}: expected header {','.join(SERIES_HEADER)!r}, got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ValidationError(f"{path}:{lineno}: malformed row {row!r}")
            ts, sid, kind, channel, value = row
            if kind not in _KIND_CHANNELS:
                raise ValidationError(f"{path}:{lineno}: unknown kind {kind!r}")
            try:
                val = float(value)
            except ValueError as exc:
                raise ValidationError(
                    f"{path}:{lineno}: bad value {value!r}") from exc
            rows.append((ts, sid, kind, channel, val))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return rows


def _build_timeline(rows, path):
    seen = sorted({r[0] for r in rows})
    parsed = []
    for ts in seen:
        if not ts.endswith("Z"):
            raise ValidationError(f"{path}: timestamp {ts!r} must be UTC (trailing Z)")
        try:
            parsed.append(np.datetime64(ts[:-1], "s"))
        except ValueError as exc:
            raise ValidationError(f"{path}: unparseable timestamp {ts!r}") from exc
    parsed = np.array(parsed, dtype="datetime64[s]")
    secs = parsed.astype("int64")
    if np.any(secs % 3600 != 0):
        bad = seen[int(np.nonzero(secs % 3600 != 0)[0][0])]
        raise ValidationError(f"{path}: non-hourly timestamp {bad!r}")
    timeline = np.arange(parsed[0], parsed[-1] + np.timedelta64(3600, "s"),
                         np.timedelta64(3600, "s"))
    grid_index = {int(t): i for i, t in enumerate(timeline.astype("int64"))}
    ts_index = {ts: grid_index[int(sec)] for ts, sec in zip(seen, secs)}
    return timeline, ts_index


def _resolve_stations(rows, station_ids, path):
    present = []
    seen = set()
    for r in rows:
        if r[1] not in seen:
            seen.add(r[1])
            present.append(r[1])
    if station_ids is None:
        return present
    known = set(station_ids)
    for sid in present:
        if sid not in known:
            raise ValidationError(f"{path}: station {sid!r} not in the graph")
    missing = [sid for sid in station_ids if sid not in seen]
    if missing:
        raise ValidationError(
            f"{path}: no rows for graph station(s) {', '.join(missing)}")
    return list(station_ids)


def _ffill_inplace(arr, filled, excluded) -> None:
    """Forward-fill NaN runs of length <= MAX_FFILL_STEPS; flag the rest.

    Steps whose gap exceeds the limit (or that precede any observation)
    are still filled numerically, but marked excluded so no window uses
    them.
    """
    steps = arr.shape[0]
    flat = arr.reshape(steps, -1)
    nan_step = np.isnan(flat).any(axis=1)
    run = 0
    for t in range(steps):
        if not nan_step[t]:
            run = 0
            continue
        run += 1
        if t == 0 or run > MAX_FFILL_STEPS:
            excluded[t] = True
        else:
            filled[t] = True
        if t > 0:
            prev = flat[t - 1]
            mask = np.isnan(flat[t])
            flat[t][mask] = prev[mask]
        else:
            flat[t] = 0.0
    # a too-long run poisons its whole extent, not just the tail
    run_start = None
    for t in range(steps):
        if nan_step[t]:
            if run_start is None:
                run_start = t
        else:
            if run_start is not None and excluded[run_start:t].any():
                excluded[run_start:t] = True
                filled[run_start:t] = False
            run_start = None
    if run_start is not None and excluded[run_start:].any():
        excluded[run_start:] = True
        filled[run_start:] = False


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


@dataclass
class NormStats:
    """Per-channel z-score statistics, fitted on the training range only."""

    x_mean: np.ndarray
    x_std: np.ndarray
    p_mean: np.ndarray
    p_std: np.ndarray
    q_mean: np.ndarray
    q_std: np.ndarray

    def normalize_bundle(self, bundle: SeriesBundle) -> SeriesBundle:
        return replace(bundle,
                       X=(bundle.X - self.x_mean) / self.x_std,
                       P=(bundle.P - self.p_mean) / self.p_std,
                       Q=(bundle.Q - self.q_mean) / self.q_std)

    def normalize_x(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_mean) / self.x_std

    def denormalize_x(self, xn: np.ndarray) -> np.ndarray:
        return xn * self.x_std + self.x_mean

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("x_mean", "x_std", "p_mean", "p_std", "q_mean", "q_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(**{k: np.asarray(d[k], dtype=np.float64)
                      for k in ("x_mean", "x_std", "p_mean", "p_std", "q_mean", "q_std")})


def _fit_channel_stats(arr: np.ndarray, label: str):
    flat = arr.reshape(-1, arr.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    zero = std == 0.0
    if np.any(zero):
        warnings.warn(f"{label}: zero-variance channel(s) at index "
                      f"{np.nonzero(zero)[0].tolist()}; using std=1")
        std = np.where(zero, 1.0, std)
    return mean, std


def fit_normalize(bundle: SeriesBundle, train_range: range) -> NormStats:
    """Fit z-score stats on train_range steps only (population std)."""
    if len(train_range) == 0:
        raise ValidationError("train range is empty")
    if train_range.start < 0 or train_range.stop > bundle.n_steps:
        raise ValidationError(
            f"train range {train_range} outside 0..{bundle.n_steps}")
    sl = slice(train_range.start, train_range.stop)
    x_mean, x_std = _fit_channel_stats(bundle.X[sl], "X")
    p_mean, p_std = _fit_channel_stats(bundle.P[sl], "P")
    q_mean, q_std = _fit_channel_stats(bundle.Q[sl], "Q")
    return NormStats(x_mean, x_std, p_mean, p_std, q_mean, q_std)


# ---------------------------------------------------------------------------
# windows and splits
# ---------------------------------------------------------------------------


@dataclass
class WindowedSample:
    """One training/evaluation instance cut at origin step t0.

    x_hist covers t in [-T'+1, 0], x_future covers [1, T], and p_all/q_all
    cover the full [-T'+1, T] span. origin_index is the bundle step index
    of t0.
    """

    x_hist: np.ndarray
    p_all: np.ndarray
    q_all: np.ndarray
    x_future: np.ndarray
    origin_index: int


def make_windows(bundle: SeriesBundle, t_hist: int, t_fore: int,
                 stride: int = 1, within: range = None) -> list:
    """Cut sliding windows; those touching excluded steps are dropped.

    When `within` is given, a window must fit entirely inside that step
    range, which is how split boundaries stay unstraddled.
    """
    if t_hist < 2:
        raise ValidationError(f"history length must be >= 2, got {t_hist}")
    if t_fore < 1:
        raise ValidationError(f"forecast length must be >= 1, got {t_fore}")
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    steps = bundle.n_steps
    lo = 0 if within is None else max(0, within.start)
    hi = steps if within is None else min(steps, within.stop)
    excluded = bundle.excluded if bundle.excluded is not None \
        else np.zeros(steps, dtype=bool)

    samples = []
    first_origin = lo + t_hist - 1
    last_origin = hi - t_fore - 1
    for origin in range(first_origin, last_origin + 1, stride):
        start = origin - t_hist + 1
        stop = origin + t_fore + 1
        if excluded[start:stop].any():
            continue
        samples.append(WindowedSample(
            x_hist=bundle.X[start:origin + 1],
            p_all=bundle.P[start:stop],
            q_all=bundle.Q[start:stop],
            x_future=bundle.X[origin + 1:stop],
            origin_index=origin))
    return samples


def split_ranges(steps: int, train_frac: float = 0.6,
                 val_frac: float = 0.2) -> tuple:
    """Chronological (train, val, test) step ranges."""
    if not (0 < train_frac < 1 and 0 < val_frac < 1
            and train_frac + val_frac < 1):
        raise ValidationError(
            f"bad split fractions {train_frac}/{val_frac}")
    n_train = int(steps * train_frac)
    n_val = int(steps * val_frac)
    if n_train == 0 or n_val == 0 or n_train + n_val >= steps:
        raise ValidationError(f"series too short to split: {steps} steps")
    return (range(0, n_train),
            range(n_train, n_train + n_val),
            range(n_train + n_val, steps))


def prepare_splits(bundle: SeriesBundle, t_hist: int, t_fore: int,
                   stride: int = 1, train_frac: float = 0.6,
                   val_frac: float = 0.2) -> tuple:
    """Normalize on train-range stats and window each chronological split.

    Returns (normalized bundle, stats, {"train": [...], "val": [...],
    "test": [...]}). Windows never straddle a split boundary.
    """
    tr, va, te = split_ranges(bundle.n_steps, train_frac, val_frac)
    stats = fit_normalize(bundle, tr)
    normed = stats.normalize_bundle(bundle)
    splits = {}
    for name, rng in (("train", tr), ("val", va), ("test", te)):
        splits[name] = make_windows(normed, t_hist, t_fore, stride=stride,
                                    within=rng)
    return normed, stats, splits
