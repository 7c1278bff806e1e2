"""Forecast metrics, persistence baseline, and the experiment harness.

Everything downstream of training lives here: per-lead-time error
curves in raw concentration units, the persistence reference every
model must beat, and a suite runner that retrains the model once per
configuration cell (ablations switch residual branches off and train
from scratch rather than zeroing a trained network).
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import NormStats, WindowedSample
from .errors import AircastError, DimensionError, ValidationError
from .model_core import ModelConfig, rollout
from .numerics import ParamSet
from .spatial_graph import SpatialGraph
from .trainer import TrainConfig, block_laplacian, stack_samples, train

POLLUTANTS = ("pm25", "o3")
LEADTIME_COLUMNS = ("lead_hour", "model", "pollutant", "mae", "rmse")


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return float(np.mean(np.abs(pred - truth)))


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def persistence_forecast(sample: WindowedSample) -> np.ndarray:
    """Repeat the last observation at every horizon."""
    t_fore = sample.p_all.shape[0] - sample.x_hist.shape[0]
    last = sample.x_hist[-1]
    return np.broadcast_to(last, (t_fore,) + last.shape).copy()


def make_model_predictor(params: ParamSet, mcfg: ModelConfig,
                         graph: SpatialGraph):
    """Predictor closure running batched inference rollouts."""
    def predict(batch: WindowedSample, n_stacked: int) -> np.ndarray:
        lap = block_laplacian(graph.laplacian, n_stacked)
        trace = rollout(batch, graph, params, mcfg, mode="infer",
                        laplacian=lap)
        return trace.predictions.data
    return predict


def persistence_predictor(batch: WindowedSample, n_stacked: int) -> np.ndarray:
    return persistence_forecast(batch)


@dataclass
class EvalReport:
    """Per-pollutant, per-lead MAE/RMSE in raw concentration units."""

    tag: str
    lead_hours: list
    mae: np.ndarray   # (T, n_pollutants)
    rmse: np.ndarray  # (T, n_pollutants)
    n_windows: int
    pollutants: tuple = POLLUTANTS

    def validate(self) -> None:
        t = len(self.lead_hours)
        if self.mae.shape != (t, len(self.pollutants)):
            raise ValidationError(f"lead axis mismatch in report {self.tag!r}")
        if self.rmse.shape != self.mae.shape:
            raise ValidationError(f"mae/rmse shape mismatch in {self.tag!r}")
        if np.any(self.mae < 0):
            raise ValidationError(f"negative MAE in report {self.tag!r}")
        # per-cell RMSE >= MAE, allowing fp slack
        if np.any(self.rmse < self.mae - 1e-9):
            raise ValidationError(f"RMSE below MAE in report {self.tag!r}")

    def mae_by_pollutant(self) -> np.ndarray:
        return self.mae.mean(axis=0)

    def rmse_by_pollutant(self) -> np.ndarray:
        return self.rmse.mean(axis=0)

    def overall_mae(self) -> float:
        return float(self.mae.mean())

    def mae_at(self, lead_hour: int) -> np.ndarray:
        return self.mae[self.lead_hours.index(lead_hour)]

    def to_dict(self) -> dict:
        return {"tag": self.tag, "lead_hours": list(self.lead_hours),
                "pollutants": list(self.pollutants),
                "mae": self.mae.tolist(), "rmse": self.rmse.tolist(),
                "n_windows": self.n_windows}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(tag=d["tag"], lead_hours=list(d["lead_hours"]),
                   mae=np.asarray(d["mae"], dtype=np.float64),
                   rmse=np.asarray(d["rmse"], dtype=np.float64),
                   n_windows=int(d["n_windows"]),
                   pollutants=tuple(d["pollutants"]))


def evaluate(samples: list, stats: NormStats, predict_fn, tag: str,
             batch_size: int = 32) -> EvalReport:
    """Score a predictor over windows; errors are denormalized first."""
    if not samples:
        raise ValidationError("cannot evaluate an empty sample list")
    t_fore = samples[0].p_all.shape[0] - samples[0].x_hist.shape[0]
    n_ch = len(POLLUTANTS)
    abs_sum = np.zeros((t_fore, n_ch))
    sq_sum = np.zeros((t_fore, n_ch))
    count = 0
    for start in range(0, len(samples), batch_size):
        group = samples[start:start + batch_size]
        batch = stack_samples(group)
        pred = stats.denormalize_x(predict_fn(batch, len(group)))
        truth = stats.denormalize_x(batch.x_future)
        if pred.shape != truth.shape:
            raise DimensionError(
                f"predictor returned {pred.shape}, expected {truth.shape}")
        err = pred - truth
        abs_sum += np.abs(err).sum(axis=1)
        sq_sum += (err ** 2).sum(axis=1)
        count += truth.shape[1]
    report = EvalReport(tag=tag, lead_hours=list(range(1, t_fore + 1)),
                        mae=abs_sum / count, rmse=np.sqrt(sq_sum / count),
                        n_windows=len(samples))
    report.validate()
    return report


def write_leadtime_csv(path, reports: list) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LEADTIME_COLUMNS)
        for rep in reports:
            for ci, pol in enumerate(rep.pollutants):
                for li, lead in enumerate(rep.lead_hours):
                    writer.writerow([lead, rep.tag, pol,
                                     repr(float(rep.mae[li, ci])),
                                     repr(float(rep.rmse[li, ci]))])


# --- experiment suite -------------------------------------------------------

@dataclass
class ExperimentCell:
    tag: str
    model: ModelConfig
    train_cfg: TrainConfig


def _cell(tag: str, mcfg: ModelConfig, tcfg: TrainConfig,
          **overrides) -> ExperimentCell:
    m = ModelConfig.from_dict({**mcfg.to_dict(),
                               **{k: v for k, v in overrides.items()
                                  if k in mcfg.to_dict()}})
    t = TrainConfig.from_dict({**tcfg.to_dict(),
                               **{k: v for k, v in overrides.items()
                                  if k in tcfg.to_dict()}})
    return ExperimentCell(tag=tag, model=m, train_cfg=t)


def ablation_cells(mcfg: ModelConfig, tcfg: TrainConfig) -> list:
    return [_cell("full", mcfg, tcfg),
            _cell("no_lid", mcfg, tcfg, use_lid=False),
            _cell("no_std", mcfg, tcfg, use_std=False),
            _cell("no_tad", mcfg, tcfg, use_tad=False),
            _cell("emissions_off", mcfg, tcfg, use_emissions=False)]


def lambda_cells(mcfg: ModelConfig, tcfg: TrainConfig) -> list:
    return [_cell(f"lam{lam:g}", mcfg, tcfg, lam=lam) for lam in (0.0, 1.0, 10.0)]


def hidden_cells(mcfg: ModelConfig, tcfg: TrainConfig) -> list:
    return [_cell(f"hidden{h}", mcfg, tcfg, hidden=h) for h in (16, 32, 64)]


SUITE_GROUPS = {"ablation": ablation_cells, "lambda": lambda_cells,
                "hidden": hidden_cells}


def suite_cells(groups, mcfg: ModelConfig, tcfg: TrainConfig) -> list:
    """Deduplicated cell list for the named groups, in request order."""
    cells = []
    seen = set()
    for g in groups:
        if g not in SUITE_GROUPS:
            raise ValidationError(
                f"unknown sweep group {g!r}; choose from {sorted(SUITE_GROUPS)}")
        for cell in SUITE_GROUPS[g](mcfg, tcfg):
            if cell.tag not in seen:
                seen.add(cell.tag)
                cells.append(cell)
    return cells


@dataclass
class SuiteResult:
    """Per-(tag, seed) evaluation reports; failures carried, not raised."""

    reports: dict = field(default_factory=dict)
    train_reports: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def tags(self) -> list:
        return sorted({t for t, _ in self.reports})

    def mean_overall_mae(self, tag: str) -> float:
        vals = [r.overall_mae() for (t, s), r in sorted(self.reports.items())
                if t == tag]
        if not vals:
            raise ValidationError(f"no successful runs for tag {tag!r}")
        return float(np.mean(vals))

    def to_dict(self) -> dict:
        out = {"reports": {}, "errors": {}, "train": {}}
        for (tag, seed), rep in sorted(self.reports.items()):
            out["reports"][f"{tag}@{seed}"] = rep.to_dict()
        for (tag, seed), msg in sorted(self.errors.items()):
            out["errors"][f"{tag}@{seed}"] = msg
        for (tag, seed), tr in sorted(self.train_reports.items()):
            out["train"][f"{tag}@{seed}"] = {
                "best_epoch": tr.best_epoch,
                "best_val_mae": tr.best_val_mae,
                "n_epochs": tr.n_epochs,
                "dic_train": [r.train.dic_spatial + r.train.dic_temporal
                              for r in tr.records],
                "l1_train": [r.train.l1 for r in tr.records]}
        return out


def run_cell(cell: ExperimentCell, splits: dict, graph: SpatialGraph,
             stats: NormStats, seed: int,
             eval_split: str = "test") -> tuple:
    """Train one configuration and score it; returns (report, train_report)."""
    tcfg = TrainConfig.from_dict({**cell.train_cfg.to_dict(), "seed": seed})
    params, train_rep = train(splits["train"], splits["val"], graph,
                              cell.model, tcfg, stats)
    predictor = make_model_predictor(params, cell.model, graph)
    report = evaluate(splits[eval_split], stats, predictor, tag=cell.tag,
                      batch_size=tcfg.batch_size)
    return report, train_rep


def run_experiment_suite(cells: list, splits: dict, graph: SpatialGraph,
                         stats: NormStats, seeds: list,
                         eval_split: str = "test",
                         include_persistence: bool = True) -> SuiteResult:
    """Train/evaluate every (cell, seed); per-cell failures don't stop it."""
    if not seeds:
        raise ValidationError("suite needs at least one seed")
    result = SuiteResult()
    if include_persistence:
        rep = evaluate(splits[eval_split], stats, persistence_predictor,
                       tag="persistence")
        for seed in seeds:  # same report under every seed, for pairing
            result.reports[("persistence", seed)] = rep
    for cell in cells:
        for seed in seeds:
            try:
                report, train_rep = run_cell(cell, splits, graph, stats,
                                             seed, eval_split)
            except AircastError as exc:
                result.errors[(cell.tag, seed)] = f"{type(exc).__name__}: {exc}"
                continue
            result.reports[(cell.tag, seed)] = report
            result.train_reports[(cell.tag, seed)] = train_rep
    return result


def write_suite_json(path, result: SuiteResult) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_report_json(path, report: EvalReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_suite_csv(path, result: SuiteResult) -> None:
    """Aggregate (over leads) MAE/RMSE per tag, seed, and pollutant."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("tag", "seed", "pollutant", "mae", "rmse"))
        for (tag, seed), rep in sorted(result.reports.items()):
            for ci, pol in enumerate(rep.pollutants):
                writer.writerow([tag, seed, pol,
                                 repr(float(rep.mae[:, ci].mean())),
                                 repr(float(rep.rmse[:, ci].mean()))])
