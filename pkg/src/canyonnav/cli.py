"""Command line interface.

Subcommands: ``simulate`` (scene config -> synthetic dataset), ``run``
(dataset + run config -> solution/verdict/skyplot CSVs), ``eval`` (solution
CSVs + truth -> metric tables, detection report, figures) and ``sweep``
(detection accuracy across window sizes). Exit codes: 0 success, 1 usage,
2 missing/unreadable files, 3 malformed input, 4 bad configuration.
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_PARSE = 3
EXIT_CONFIG = 4

# every run-config key may be overridden on the command line as --key value
CONFIG_KEYS = [
    "mode", "seed", "n_sw", "delta_d_pix_m", "d_thres_m", "n_thres",
    "neighbor_radius_m", "alpha_res_deg", "self_occlusion_radius_m", "k_w",
    "snr_T", "snr_F", "snr_A", "snr_a", "elevation_mask_deg",
    "ground_height_m", "sensor_height_m", "voxel_m", "max_iterations",
    "convergence_m", "clock_mode", "atmosphere", "klobuchar_alpha",
    "klobuchar_beta", "anchor_lat_deg", "anchor_lon_deg", "anchor_h_m",
    "observations", "poses", "frames_dir", "truth", "sat_truth", "out_dir",
]


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="canyonnav", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    sim = sub.add_parser("simulate", help="generate a synthetic dataset from a scene config")
    sim.add_argument("--scene", required=True, help="scene config file")
    sim.add_argument("--out", required=True, help="output directory")

    run = sub.add_parser("run", help="process a dataset under one mode")
    run.add_argument("--config", required=True, help="run config file")
    for key in CONFIG_KEYS:
        run.add_argument(f"--{key}", default=None, help=argparse.SUPPRESS)

    ev = sub.add_parser("eval", help="metrics tables, detection report and figures")
    ev.add_argument("--truth", required=True, help="truth trajectory CSV")
    ev.add_argument(
        "--solutions", action="append", required=True, metavar="LABEL=PATH",
        help="labelled solutions CSV; repeat for side-by-side columns "
             "(precomputed receiver outputs can be compared by passing them here)",
    )
    ev.add_argument("--verdicts", default=None, help="verdicts or skyplot CSV")
    ev.add_argument("--sat-truth", default=None, help="per-satellite truth CSV")
    ev.add_argument("--out", required=True, help="output directory")

    sw = sub.add_parser("sweep", help="detection accuracy across window sizes")
    sw.add_argument("--config", required=True, help="run config file")
    sw.add_argument("--n-sw", default="100,150,200,250", help="comma separated window sizes")
    sw.add_argument("--out", required=True, help="output directory")
    return parser


def _require_file(path: str) -> None:
    if not os.path.exists(path):
        raise FileNotFoundError(path)


def _cmd_simulate(args) -> int:
    from . import pipeline

    _require_file(args.scene)
    scene = pipeline.load_scene(args.scene)
    files = pipeline.simulate_dataset(scene, args.out)
    n_epochs = len(scene.epochs())
    print(f"simulated scene {scene.name!r}: {n_epochs} epochs, "
          f"{len(scene.satellites)} satellites -> {args.out}")
    for name, path in files.items():
        print(f"  {name}: {path}")
    return EXIT_OK


def _cmd_run(args) -> int:
    from . import pipeline

    _require_file(args.config)
    overrides = {
        key: getattr(args, key) for key in CONFIG_KEYS if getattr(args, key) is not None
    }
    cfg = pipeline.load_run_config(args.config, overrides)
    for path in (cfg.observations, cfg.poses, cfg.frames_dir):
        _require_file(path)
    results = pipeline.run_dataset(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    solutions = os.path.join(cfg.out_dir, "solutions.csv")
    verdicts = os.path.join(cfg.out_dir, "verdicts.csv")
    skyplot = os.path.join(cfg.out_dir, "skyplot.csv")
    pipeline.write_solutions(solutions, results)
    pipeline.write_verdicts(verdicts, results)
    pipeline.write_skyplot(skyplot, results)
    n_conv = sum(1 for r in results if r.solution.converged)
    print(f"mode {cfg.mode}: {n_conv}/{len(results)} epochs converged")
    print(f"  solutions: {solutions}\n  verdicts: {verdicts}\n  skyplot: {skyplot}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from . import pipeline, report

    _require_file(args.truth)
    truth = pipeline.read_truth(args.truth)
    os.makedirs(args.out, exist_ok=True)

    metrics = {}
    errors_by_label = {}
    for item in args.solutions:
        if "=" not in item:
            raise pipeline.ConfigError(
                f"--solutions wants LABEL=PATH, got {item!r}"
            )
        label, path = item.split("=", 1)
        _require_file(path)
        rows = pipeline.read_solutions(path)
        metrics[label] = pipeline.compute_position_metrics(rows, truth)
        series = []
        for row in rows:
            if row["position"] is not None and row["epoch_s"] in truth:
                series.append(
                    (row["epoch_s"],
                     pipeline.horizontal_error_m(row["position"], truth[row["epoch_s"]]))
                )
        errors_by_label[label] = series

    table = report.format_metrics_table(metrics)
    with open(os.path.join(args.out, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    report.write_metrics_csv(os.path.join(args.out, "metrics.csv"), metrics)
    report.save_error_series(os.path.join(args.out, "error_2d.png"), errors_by_label)
    print(table)

    if args.verdicts and args.sat_truth:
        _require_file(args.verdicts)
        _require_file(args.sat_truth)
        verdict_rows = pipeline.read_verdicts(args.verdicts)
        truth_rows = pipeline.read_sat_truth(args.sat_truth)
        det = pipeline.compute_detection_report(verdict_rows, truth_rows)
        det_table = report.format_detection_table(det)
        with open(os.path.join(args.out, "detection.txt"), "w", encoding="utf-8") as fh:
            fh.write(det_table)
        report.write_detection_csv(os.path.join(args.out, "detection.csv"), det)
        report.save_detection_bins(os.path.join(args.out, "detection_bins.png"), det)
        report.save_skyplot(os.path.join(args.out, "skyplot.png"), verdict_rows)
        print(det_table)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from . import pipeline, report

    _require_file(args.config)
    cfg = pipeline.load_run_config(args.config, None)
    for path in (cfg.observations, cfg.poses, cfg.frames_dir):
        _require_file(path)
    if not cfg.sat_truth:
        raise pipeline.ConfigError("sweep needs a sat_truth file in the run config")
    _require_file(cfg.sat_truth)
    try:
        sizes = [int(v) for v in args.n_sw.split(",") if v.strip()]
    except ValueError as exc:
        raise pipeline.ConfigError(f"bad --n-sw list {args.n_sw!r}") from exc
    truth_rows = pipeline.read_sat_truth(cfg.sat_truth)
    swept = pipeline.sweep_detection(cfg, sizes)
    reports = {
        n_sw: pipeline.compute_detection_report(rows, truth_rows)
        for n_sw, rows in swept.items()
    }
    os.makedirs(args.out, exist_ok=True)
    table = report.format_sweep_table(reports)
    with open(os.path.join(args.out, "sweep.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    report.write_sweep_csv(os.path.join(args.out, "sweep.csv"), reports)
    report.save_sweep_figure(os.path.join(args.out, "sweep.png"), reports)
    print(table)
    return EXIT_OK


def cli_main(argv) -> int:
    from . import pipeline

    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _Usage("a subcommand is required")
        handler = {
            "simulate": _cmd_simulate,
            "run": _cmd_run,
            "eval": _cmd_eval,
            "sweep": _cmd_sweep,
        }[args.command]
        return handler(args)
    except _Usage as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        missing = exc.args[0] if exc.args else exc.filename
        print(f"error: missing input: {missing}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (pipeline.ParseError, pipeline.MissingColumn) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (pipeline.ConfigError, pipeline.NoEpochs, pipeline.NoTruth, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
