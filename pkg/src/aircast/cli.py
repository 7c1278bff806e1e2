"""Command-line pipeline: synthetic data through training and reports.

Subcommands share one INI config plus dotted --set overrides; every run
writes the fully resolved configuration next to its outputs. Exit
codes: 0 success, 1 validation problem, 2 numeric failure, 3 I/O.
"""

import argparse
import json
import os
import sys

import numpy as np

from .config import apply_override, load_config, write_resolved
from .ctm_oracle import demo_stations, generate, synthetic_scenario
from .dataset import load_bundle, make_windows, prepare_splits, split_ranges, write_bundle
from .errors import AircastError, NumericError
from .errors import ValidationError
from .evaluator import (SuiteResult, evaluate, make_model_predictor,
                        persistence_predictor, run_cell,
                        run_experiment_suite, suite_cells, write_leadtime_csv,
                        write_suite_csv, write_suite_json)
from .gradcheck import GATE_TOL, run_gradient_gate
from .model_core import rollout
from .spatial_graph import build_graph, load_stations, write_stations
from .trainer import checkpoint_load, checkpoint_save, train, write_metrics_csv


def _load_graph(cfg, stations_path):
    return build_graph(load_stations(stations_path), cfg.graph.threshold_km)


def _load_bundle_for(graph, data_path):
    return load_bundle(data_path, station_ids=graph.station_ids())


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def cmd_gen_data(cfg, args, out) -> int:
    stations = demo_stations(cfg.oracle.n_stations, seed=cfg.oracle.seed)
    graph = build_graph(stations, cfg.graph.threshold_km)
    scenario = synthetic_scenario(graph, cfg.oracle.steps,
                                  seed=cfg.oracle.seed,
                                  wind_speed=cfg.oracle.wind_speed,
                                  emission_scale=cfg.oracle.emission_scale,
                                  local_utc_offset=cfg.oracle.local_utc_offset,
                                  wind_obs_sigma=cfg.oracle.wind_obs_sigma,
                                  aloft_exchange=cfg.oracle.aloft_exchange,
                                  event_sigma=cfg.oracle.event_sigma)
    bundle = generate(scenario, graph, cfg.oracle.steps)
    write_stations(os.path.join(out, "stations.csv"), stations)
    write_bundle(os.path.join(out, "series.csv"), bundle)
    print(f"wrote {len(stations)} stations and {cfg.oracle.steps} hourly "
          f"steps under {out}")
    return 0


def cmd_build_graph(cfg, args, out) -> int:
    graph = _load_graph(cfg, args.stations)
    counts = np.bincount(graph.degree.astype(int),
                         minlength=int(graph.degree.max()) + 1)
    summary = {"n_stations": graph.n_stations,
               "n_edges": int(graph.adjacency.sum()) // 2,
               "threshold_km": graph.threshold_km,
               "degree_histogram": {str(d): int(c)
                                    for d, c in enumerate(counts) if c > 0}}
    _write_json(os.path.join(out, "graph_summary.json"), summary)
    lap_path = os.path.join(out, "laplacian.csv")
    with open(lap_path, "w") as fh:
        fh.write(",".join(graph.station_ids()) + "\n")
        for row in graph.laplacian:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    print(f"graph: {summary['n_stations']} stations, "
          f"{summary['n_edges']} edges; wrote summary and operator to {out}")
    return 0


def cmd_train(cfg, args, out) -> int:
    graph = _load_graph(cfg, args.stations)
    bundle = _load_bundle_for(graph, args.data)
    _, stats, splits = prepare_splits(bundle, cfg.dataset.t_hist,
                                      cfg.dataset.t_fore, cfg.dataset.stride,
                                      cfg.dataset.train_frac,
                                      cfg.dataset.val_frac)
    params, report = train(splits["train"], splits["val"], graph, cfg.model,
                           cfg.train, stats)
    checkpoint_save(os.path.join(out, "checkpoint.ckpt"), params, cfg.model,
                    stats)
    write_metrics_csv(os.path.join(out, "metrics.csv"), report)
    from . import figures
    figures.render_training_curves(report,
                                   os.path.join(out, "training_curves.png"))
    print(f"trained {report.n_epochs} epochs "
          f"({len(splits['train'])} train / {len(splits['val'])} val windows); "
          f"best epoch {report.best_epoch} with val MAE "
          f"{report.best_val_mae:.4f}; artifacts under {out}")
    return 0


def _eval_windows(cfg, bundle, stats, split_name):
    normed = stats.normalize_bundle(bundle)
    tr, va, te = split_ranges(bundle.n_steps, cfg.dataset.train_frac,
                              cfg.dataset.val_frac)
    within = {"train": tr, "val": va, "test": te}[split_name]
    samples = make_windows(normed, cfg.dataset.t_hist, cfg.dataset.t_fore,
                           stride=cfg.dataset.stride, within=within)
    if not samples:
        raise ValidationError(
            f"no complete windows fit inside the {split_name} split")
    return samples


def cmd_evaluate(cfg, args, out) -> int:
    params, mcfg, stats = checkpoint_load(args.checkpoint)
    graph = _load_graph(cfg, args.stations)
    bundle = _load_bundle_for(graph, args.data)
    samples = _eval_windows(cfg, bundle, stats, args.split)
    model_rep = evaluate(samples, stats,
                         make_model_predictor(params, mcfg, graph),
                         tag="model", batch_size=cfg.train.batch_size)
    pers_rep = evaluate(samples, stats, persistence_predictor,
                        tag="persistence")
    _write_json(os.path.join(out, "report.json"),
                {"model": model_rep.to_dict(),
                 "persistence": pers_rep.to_dict(),
                 "split": args.split})
    write_leadtime_csv(os.path.join(out, "leadtime_curve.csv"),
                       [model_rep, pers_rep])
    from . import figures
    figures.render_leadtime_curves([model_rep, pers_rep],
                                   os.path.join(out, "leadtime_curve.png"))
    print(f"{args.split} split, {model_rep.n_windows} windows: model MAE "
          f"{model_rep.overall_mae():.4f} vs persistence "
          f"{pers_rep.overall_mae():.4f}; report under {out}")
    return 0


def cmd_forecast(cfg, args, out) -> int:
    params, mcfg, stats = checkpoint_load(args.checkpoint)
    graph = _load_graph(cfg, args.stations)
    bundle = _load_bundle_for(graph, args.data)
    normed = stats.normalize_bundle(bundle)
    samples = make_windows(normed, cfg.dataset.t_hist, cfg.dataset.t_fore,
                           stride=1)
    if not samples:
        raise ValidationError("series too short for one forecast window")
    sample = samples[-1]  # latest complete window
    trace = rollout(sample, graph, params, mcfg, mode="infer")
    pred = stats.denormalize_x(trace.predictions.data)
    t_fore = pred.shape[0]
    origin = sample.origin_index
    times = bundle.timestamps[origin + 1:origin + 1 + t_fore]
    csv_path = os.path.join(out, "forecast.csv")
    with open(csv_path, "w") as fh:
        fh.write("timestamp,station_id,pm25,o3\n")
        for ti in range(t_fore):
            ts = np.datetime_as_string(times[ti], unit="s") + "Z"
            for vi, sid in enumerate(graph.station_ids()):
                fh.write(f"{ts},{sid},{pred[ti, vi, 0]!r},{pred[ti, vi, 1]!r}\n")
    truth = bundle.X[origin + 1:origin + 1 + t_fore]
    from . import figures
    figures.render_forecast(times, graph.station_ids(), pred, truth,
                            os.path.join(out, "forecast.png"))
    print(f"forecast origin {np.datetime_as_string(bundle.timestamps[origin], unit='s')}Z: "
          f"{t_fore * graph.n_stations} rows -> {csv_path}")
    return 0


def _sweep_worker(payload):
    cell, splits, graph, stats, seed, eval_split = payload
    try:
        report, train_rep = run_cell(cell, splits, graph, stats, seed,
                                     eval_split)
    except AircastError as exc:
        return (cell.tag, seed, None, None, f"{type(exc).__name__}: {exc}")
    return (cell.tag, seed, report, train_rep, None)


def cmd_sweep(cfg, args, out) -> int:
    graph = _load_graph(cfg, args.stations)
    bundle = _load_bundle_for(graph, args.data)
    _, stats, splits = prepare_splits(bundle, cfg.dataset.t_hist,
                                      cfg.dataset.t_fore, cfg.dataset.stride,
                                      cfg.dataset.train_frac,
                                      cfg.dataset.val_frac)
    cells = suite_cells(cfg.sweep.groups, cfg.model, cfg.train)
    seeds = list(cfg.sweep.seeds)
    jobs = args.jobs if args.jobs is not None else cfg.sweep.jobs
    if jobs < 1:
        raise ValidationError(f"--jobs must be >= 1, got {jobs}")
    if jobs == 1:
        result = run_experiment_suite(cells, splits, graph, stats, seeds,
                                      eval_split=cfg.sweep.eval_split)
    else:
        result = SuiteResult()
        pers = evaluate(splits[cfg.sweep.eval_split], stats,
                        persistence_predictor, tag="persistence")
        for seed in seeds:
            result.reports[("persistence", seed)] = pers
        from concurrent.futures import ProcessPoolExecutor
        payloads = [(cell, splits, graph, stats, seed, cfg.sweep.eval_split)
                    for cell in cells for seed in seeds]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for tag, seed, rep, tr, err in pool.map(_sweep_worker, payloads):
                if err is not None:
                    result.errors[(tag, seed)] = err
                else:
                    result.reports[(tag, seed)] = rep
                    result.train_reports[(tag, seed)] = tr
    write_suite_json(os.path.join(out, "suite.json"), result)
    write_suite_csv(os.path.join(out, "suite.csv"), result)
    from . import figures
    figures.render_suite_bars(result, os.path.join(out, "suite_mae.png"))
    if result.train_reports:
        figures.render_dic_curves(result, os.path.join(out, "dic_curves.png"))
    for tag in result.tags():
        print(f"{tag}: mean MAE {result.mean_overall_mae(tag):.4f}")
    for key, msg in sorted(result.errors.items()):
        print(f"failed cell {key}: {msg}", file=sys.stderr)
    print(f"suite artifacts under {out}")
    return 0


def cmd_gradcheck(cfg, args, out) -> int:
    ok, worst = run_gradient_gate()
    _write_json(os.path.join(out, "gradcheck.json"),
                {"passed": ok, "tolerance": GATE_TOL,
                 "worst_rel_error": {str(k): v for k, v in worst.items()}})
    for seed, err in sorted(worst.items()):
        print(f"seed {seed}: max rel error {err:.3e} "
              f"({'ok' if err < GATE_TOL else 'FAIL'})")
    return 0 if ok else 1


COMMANDS = {"gen-data": cmd_gen_data, "build-graph": cmd_build_graph,
            "train": cmd_train, "evaluate": cmd_evaluate,
            "forecast": cmd_forecast, "sweep": cmd_sweep,
            "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aircast",
        description="Desk-scale air-quality forecasting pipeline: synthetic "
                    "transport data, graph construction, training, "
                    "evaluation, and forecasting.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None,
                        help="INI config file (defaults used when omitted)")
        sp.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--out", default=None,
                        help="output directory (default runs/<command>)")
        sp.add_argument("--seed", type=int, default=None,
                        help="shorthand setting oracle.seed and train.seed")

    common(sub.add_parser("gen-data", help="generate synthetic station data"))

    bg = sub.add_parser("build-graph", help="build the station graph")
    common(bg)
    bg.add_argument("--stations", required=True, help="stations CSV")

    tr = sub.add_parser("train", help="train a model on a series file")
    common(tr)
    tr.add_argument("--stations", required=True)
    tr.add_argument("--data", required=True, help="series CSV")

    ev = sub.add_parser("evaluate", help="score a checkpoint against persistence")
    common(ev)
    ev.add_argument("--stations", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", default="test",
                    choices=("train", "val", "test"))

    fc = sub.add_parser("forecast", help="forecast from the latest window")
    common(fc)
    fc.add_argument("--stations", required=True)
    fc.add_argument("--data", required=True)
    fc.add_argument("--checkpoint", required=True)

    sw = sub.add_parser("sweep", help="run the configuration sweep matrix")
    common(sw)
    sw.add_argument("--stations", required=True)
    sw.add_argument("--data", required=True)
    sw.add_argument("--jobs", type=int, default=None,
                    help="parallel training processes (default sweep.jobs)")

    common(sub.add_parser("gradcheck", help="finite-difference gradient gate"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, tuple(args.overrides))
        if args.seed is not None:
            apply_override(cfg, f"oracle.seed={args.seed}")
            apply_override(cfg, f"train.seed={args.seed}")
        out = args.out or os.path.join("runs", args.command)
        os.makedirs(out, exist_ok=True)
        write_resolved(cfg, os.path.join(out, "resolved.ini"))
        return COMMANDS[args.command](cfg, args, out)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AircastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
