"""Mini-batch training loop with Adam, plateau LR decay, and early stopping.

Batching stacks samples along the station axis and runs them through one
rollout against a block-diagonal graph operator, so the recurrent code
path is identical for batch sizes 1 and 32. Checkpoints are a small
self-describing binary container that round-trips parameters bitwise.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import NormStats, WindowedSample
from .errors import CheckpointError, NumericError, ValidationError
from .losses import LossBreakdown, breakdown_row, total_loss, METRICS_COLUMNS
from .model_core import ModelConfig, init_params, rollout, zero_params
from .numerics import AdamState, ParamSet, adam_step, clip_grads_, grad
from .spatial_graph import SpatialGraph

SHUFFLE_STREAM = 0x5F
DROPOUT_STREAM = 0xD0


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 100
    lam: float = 1.0
    early_stop_patience: int = 10
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    min_lr: float = 1e-6
    grad_clip: float = 5.0  # global-norm cap; <= 0 disables
    include_smooth: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValidationError(
                f"plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise ValidationError("patiences must be >= 1")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ValidationError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.lam < 0:
            raise ValidationError(f"lambda must be nonnegative, got {self.lam}")
        if self.min_lr <= 0 or self.min_lr > self.lr:
            raise ValidationError("min_lr must satisfy 0 < min_lr <= lr")

    def to_dict(self) -> dict:
        return {"lr": self.lr, "batch_size": self.batch_size,
                "max_epochs": self.max_epochs, "lam": self.lam,
                "early_stop_patience": self.early_stop_patience,
                "plateau_patience": self.plateau_patience,
                "plateau_factor": self.plateau_factor, "min_lr": self.min_lr,
                "grad_clip": self.grad_clip,
                "include_smooth": self.include_smooth, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train: LossBreakdown
    val: LossBreakdown
    val_mae: float  # denormalized, averaged over all val windows
    lr: float


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_mae: float = float("nan")
    stopped_early: bool = False
    wall_time_s: float = 0.0

    @property
    def lr_trajectory(self) -> list:
        return [r.lr for r in self.records]

    @property
    def n_epochs(self) -> int:
        return len(self.records)


def stack_samples(samples: list) -> WindowedSample:
    """Concatenate samples along the station axis into one wide sample."""
    if len(samples) == 1:
        return samples[0]
    return WindowedSample(
        x_hist=np.concatenate([s.x_hist for s in samples], axis=1),
        p_all=np.concatenate([s.p_all for s in samples], axis=1),
        q_all=np.concatenate([s.q_all for s in samples], axis=1),
        x_future=np.concatenate([s.x_future for s in samples], axis=1),
        origin_index=-1)


def block_laplacian(lap: np.ndarray, copies: int) -> np.ndarray:
    if copies == 1:
        return lap
    return np.kron(np.eye(copies), lap)


def _batch_loss(trace, batch, n_batch: int, n_stations: int, lam: float,
                include_smooth: bool) -> LossBreakdown:
    """Loss over a stacked batch; equals the mean of per-sample losses."""
    transport = trace.transport
    if n_batch > 1:
        t_steps = transport.shape[0]
        transport = transport.reshape(t_steps, n_batch, n_stations,
                                      transport.shape[-1])
    return total_loss(trace.predictions, batch.x_future, transport, lam,
                      include_smooth=include_smooth)


def _mean_breakdown(pairs: list, lam: float) -> LossBreakdown:
    """Weighted mean of (n_samples, LossBreakdown) pairs."""
    n = sum(w for w, _ in pairs)
    avg = lambda f: sum(w * getattr(b, f) for w, b in pairs) / n
    return LossBreakdown(l1=avg("l1"), dic_spatial=avg("dic_spatial"),
                         dic_temporal=avg("dic_temporal"),
                         dic_smooth=avg("dic_smooth"), total=avg("total"),
                         lam=lam)


def _make_batches(order: np.ndarray, batch_size: int) -> list:
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def validation_pass(samples: list, graph: SpatialGraph, params: ParamSet,
                    mcfg: ModelConfig, tcfg: TrainConfig,
                    stats: NormStats) -> tuple:
    """Loss breakdown plus denormalized MAE over a sample list, infer mode."""
    pairs = []
    abs_err = 0.0
    n_elems = 0
    for idx in _make_batches(np.arange(len(samples)), tcfg.batch_size):
        group = [samples[i] for i in idx]
        batch = stack_samples(group)
        lap = block_laplacian(graph.laplacian, len(group))
        trace = rollout(batch, graph, params, mcfg, mode="infer", laplacian=lap)
        b = _batch_loss(trace, batch, len(group), graph.n_stations, tcfg.lam,
                        tcfg.include_smooth)
        pairs.append((len(group), b))
        pred = stats.denormalize_x(trace.predictions.data)
        truth = stats.denormalize_x(batch.x_future)
        abs_err += float(np.abs(pred - truth).sum())
        n_elems += truth.size
    return _mean_breakdown(pairs, tcfg.lam), abs_err / n_elems


def train(train_samples: list, val_samples: list, graph: SpatialGraph,
          mcfg: ModelConfig, tcfg: TrainConfig,
          stats: NormStats) -> tuple:
    """Fit the model; returns (params restored to the best-val epoch, report)."""
    tcfg.validate()
    mcfg.validate()
    if not train_samples:
        raise ValidationError("train split is empty")
    if not val_samples:
        raise ValidationError("val split is empty")

    t_start = time.perf_counter()
    params = init_params(mcfg, seed=tcfg.seed)
    adam = AdamState.init(params, lr=tcfg.lr)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence([tcfg.seed, SHUFFLE_STREAM]))
    dropout_rng = np.random.default_rng(
        np.random.SeedSequence([tcfg.seed, DROPOUT_STREAM]))

    report = TrainReport()
    best_values = params.values_copy()
    best_mae = float("inf")
    plateau_wait = 0
    stop_wait = 0
    lr = tcfg.lr

    for epoch in range(1, tcfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_samples))
        train_pairs = []
        for b_idx, idx in enumerate(_make_batches(order, tcfg.batch_size)):
            group = [train_samples[i] for i in idx]
            batch = stack_samples(group)
            lap = block_laplacian(graph.laplacian, len(group))
            cell = []  # closure stashes the breakdown alongside the tensor

            def loss_fn(ps, batch=batch, lap=lap, n=len(group), cell=cell):
                trace = rollout(batch, graph, ps, mcfg, mode="train",
                                dropout_rng=dropout_rng, laplacian=lap)
                b = _batch_loss(trace, batch, n, graph.n_stations, tcfg.lam,
                                tcfg.include_smooth)
                cell.append(b)
                return b.total_tensor

            try:
                grads = grad(loss_fn, params)
            except NumericError as exc:
                raise NumericError(
                    f"training diverged at epoch {epoch}, batch {b_idx}: {exc}"
                ) from exc
            if tcfg.grad_clip > 0:
                clip_grads_(grads, tcfg.grad_clip)
            adam.lr = lr
            adam_step(params, grads, adam)
            train_pairs.append((len(group), cell[0]))

        train_b = _mean_breakdown(train_pairs, tcfg.lam)
        val_b, val_mae = validation_pass(val_samples, graph, params, mcfg,
                                         tcfg, stats)
        report.records.append(EpochRecord(epoch=epoch, train=train_b,
                                          val=val_b, val_mae=val_mae, lr=lr))

        if val_mae < best_mae:
            best_mae = val_mae
            best_values = params.values_copy()
            report.best_epoch = epoch
            plateau_wait = 0
            stop_wait = 0
        else:
            plateau_wait += 1
            stop_wait += 1
            if stop_wait >= tcfg.early_stop_patience:
                report.stopped_early = True
                break
            if plateau_wait >= tcfg.plateau_patience:
                lr = max(lr * tcfg.plateau_factor, tcfg.min_lr)
                plateau_wait = 0

    params.load_values(best_values)
    report.best_val_mae = best_mae if report.records else float("nan")
    report.wall_time_s = time.perf_counter() - t_start
    return params, report


def write_metrics_csv(path, report: TrainReport) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for rec in report.records:
            writer.writerow(breakdown_row(rec.epoch, "train", rec.train))
            writer.writerow(breakdown_row(rec.epoch, "val", rec.val))


# --- checkpoint container -------------------------------------------------
#
# magic(8) | version uint32 LE | header_len uint32 LE | header JSON |
# concatenated raw <f8 C-order parameter bytes in header-manifest order.
# JSON is dumped with sorted keys and no whitespace so identical inputs
# produce identical files.

CKPT_MAGIC = b"AIRCASTK"
CKPT_VERSION = 1


def checkpoint_save(path, params: ParamSet, mcfg: ModelConfig,
                    stats: NormStats) -> None:
    manifest = [{"name": name, "shape": list(p.data.shape)}
                for name, p in sorted(params.items())]
    header = json.dumps({"model": mcfg.to_dict(), "params": manifest,
                         "stats": stats.to_dict()},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(np.uint32(CKPT_VERSION).astype("<u4").tobytes())
        fh.write(np.uint32(len(header)).astype("<u4").tobytes())
        fh.write(header)
        for entry in manifest:
            fh.write(params[entry["name"]].data.astype("<f8").tobytes(order="C"))


def checkpoint_load(path) -> tuple:
    """Read a checkpoint; returns (params, model_config, norm_stats)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise CheckpointError(f"truncated checkpoint: {path}")
    if blob[:8] != CKPT_MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    version = int(np.frombuffer(blob[8:12], dtype="<u4")[0])
    if version != CKPT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version} (expected {CKPT_VERSION})")
    header_len = int(np.frombuffer(blob[12:16], dtype="<u4")[0])
    if len(blob) < 16 + header_len:
        raise CheckpointError(f"truncated checkpoint header: {path}")
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
        mcfg = ModelConfig.from_dict(header["model"])
        stats = NormStats.from_dict(header["stats"])
        manifest = header["params"]
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from exc

    params = ParamSet()
    offset = 16 + header_len
    for entry in manifest:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 8
        if len(blob) < offset + nbytes:
            raise CheckpointError(f"truncated checkpoint payload: {path}")
        arr = np.frombuffer(blob[offset:offset + nbytes],
                            dtype="<f8").reshape(shape).copy()
        params.add(entry["name"], arr)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"trailing bytes in checkpoint: {path}")

    expected = set(zero_params(mcfg).keys())
    if set(params.keys()) != expected:
        raise CheckpointError("checkpoint parameters do not match its model config")
    return params, mcfg, stats
