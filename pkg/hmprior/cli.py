"""
Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 the run completed
but the constraints were not met.
"""
import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from hmprior.config import load_config
from hmprior.density import joint_density_check
from hmprior.engine import (EMULATED, ORACLE, VALIDATION_STREAM, grid_pvalue_map, run_history_match,
                            simulate_predictive, survivor_frame, trace_frame, validate_lambda)
from hmprior.errors import ConfigError, HistoryMatchError
from hmprior.reporting import validation_frame, write_csv, write_json, write_manifest
from hmprior.simbank import augment_bank, build_bank, load_bank, save_bank
from hmprior.visualization import (create_joint_contour, create_predictive_histogram, create_pvalue_heatmap,
                                   create_wave_scatter_matrix, save_figure)

logger = logging.getLogger("hmprior")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNSATISFIED = 2
JOINT_STREAM = 7


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _overrides(args):
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out is not None:
        out["output"] = args.out
    if args.threads is not None:
        out["threads"] = args.threads
    if args.deterministic:
        out["deterministic"] = True
    if args.oracle:
        out["waves.mode"] = ORACLE
    if args.plots:
        out["plots"] = True
    return out


def _load(args):
    if not args.config:
        raise ConfigError("--config is required for this command")
    return load_config(args.config, overrides=_overrides(args))


def _bank_for(cfg):
    if cfg.waves.mode != EMULATED:
        return None
    if cfg.bank_path:
        bank, _ = load_bank(cfg.bank_path)
        if bank.d != cfg.model.d or bank.J != cfg.model.J:
            raise ConfigError("bank snapshot does not match the model dimensions", field="bank.path")
        return bank
    return build_bank(cfg.model, cfg.box, cfg.bank_size, cfg.seed, threads=cfg.threads,
                      center=cfg.bank_center, freeze_scale=cfg.freeze_scale)


def _lambda_point(cfg, values, field):
    if values is None:
        raise ConfigError("a hyperparameter value is required", field=field)
    if len(values) != cfg.box.d:
        raise ConfigError(f"expected {cfg.box.d} hyperparameter values, got {len(values)}", field=field)
    if np.any(np.asarray(values, dtype=float)[np.array(cfg.box.log_scale, dtype=bool)] <= 0):
        raise ConfigError("log-scaled hyperparameters must be positive", field=field)
    if not cfg.box.contains(values, natural=True):
        raise ConfigError(f"lambda={list(values)} lies outside the box", field=field)
    return cfg.box.point(values, natural=True)


def cmd_match(args):
    cfg = _load(args)
    out = cfg.output
    report = run_history_match(cfg.model, cfg.box, cfg.constraints, cfg.waves, bank=_bank_for(cfg))
    artifacts = [write_csv(trace_frame(report), out / "trace.csv"),
                 write_json(report.to_dict(), out / "report.json")]
    if cfg.box.d == 2:
        artifacts.append(write_csv(survivor_frame(report), out / "survivors.csv"))
    if cfg.plots and cfg.box.d > 2:
        trace = trace_frame(report)
        for state in report.waves:
            fig = create_wave_scatter_matrix(trace[trace["wave"] == state.wave], cfg.box.names,
                                             f"Wave {state.wave}")
            artifacts.append(save_figure(fig, out / "plots" / f"wave_{state.wave:02d}.svg"))
    write_manifest(out, cfg, "match", [a for a in artifacts if a is not None])

    wave, index, best = report.best
    print(f"History match finished after {len(report.waves)} waves ({report.stop_reason})")
    print(f"Best implausibility {best.implausibility:.4g} at wave {wave}, "
          f"lambda={np.round(best.lam.natural(), 4).tolist()}")
    print(f"Zero-implausibility points: {len(report.zero_points)}; simulations used: {report.total_simulations}")
    return EXIT_OK if report.found else EXIT_UNSATISFIED


def cmd_grid(args):
    cfg = _load(args)
    out = cfg.output
    counts = tuple(args.resolution) if args.resolution else cfg.grid
    frame = grid_pvalue_map(cfg.model, cfg.box, cfg.constraints, counts, cfg.waves, bank=_bank_for(cfg))
    artifacts = [write_csv(frame, out / "grid.csv")]
    if cfg.plots:
        overlay = pd.read_csv(args.overlay) if args.overlay else None
        for check in cfg.constraints.checks():
            fig = create_pvalue_heatmap(frame, cfg.box, check.label, alpha=check.alpha, overlay=overlay)
            artifacts.append(save_figure(fig, out / "plots" / f"grid_{check.label}.svg"))
        fig = create_pvalue_heatmap(frame, cfg.box, "I", overlay=overlay)
        artifacts.append(save_figure(fig, out / "plots" / "grid_I.svg"))
    write_manifest(out, cfg, "grid", [a for a in artifacts if a is not None])
    print(f"Grid map with {len(frame)} points written to {out / 'grid.csv'}")
    return EXIT_OK


def cmd_validate(args):
    cfg = _load(args)
    out = cfg.output
    lam = _lambda_point(cfg, args.lam if args.lam else cfg.validate.get("lambda"), "validate.lambda")
    n_sims = args.n_sims or int(cfg.validate.get("n_sims", 50_000))
    seed = [cfg.seed, VALIDATION_STREAM, 0, 0]
    record = validate_lambda(cfg.model, lam, cfg.constraints, n_sims, seed, threads=cfg.threads)
    artifacts = [write_csv(validation_frame(record), out / "validation.csv"),
                 write_json(record.to_dict(cfg.box), out / "validation.json")]
    if cfg.plots:
        sims = simulate_predictive(cfg.model, lam, n_sims, seed, threads=cfg.threads)
        for c in cfg.constraints.constraints:
            label = cfg.model.labels[c.summary]
            fig = create_predictive_histogram(sims[:, c.summary], label, c.implausible, c.plausible)
            artifacts.append(save_figure(fig, out / "plots" / f"predictive_{label}.svg"))
    write_manifest(out, cfg, "validate", [a for a in artifacts if a is not None])
    for p in record.pvalues:
        print(f"{p.label:>20s}  h={p.value:<10.4g} p={p.estimate:.4f}  ({p.kind.value})")
    print(f"satisfies={record.satisfies}")
    return EXIT_OK if record.satisfies else EXIT_UNSATISFIED


def _summary_pair(cfg, values):
    if values is None or len(values) != 2:
        raise ConfigError("two summaries are required", field="jointcheck.summaries")
    out = []
    for v in values:
        if isinstance(v, str) and not v.isdigit():
            if v not in cfg.model.labels:
                raise ConfigError(f"unknown summary '{v}'", field="jointcheck.summaries")
            out.append(cfg.model.labels.index(v))
            continue
        j = int(v)
        if not 0 <= j < cfg.model.J:
            raise ConfigError(f"summary index {j} out of range", field="jointcheck.summaries")
        out.append(j)
    if out[0] == out[1]:
        raise ConfigError("the two summaries must differ", field="jointcheck.summaries")
    return out


def cmd_jointcheck(args):
    cfg = _load(args)
    out = cfg.output
    jc = cfg.jointcheck
    lam = _lambda_point(cfg, args.lam if args.lam else jc.get("lambda"), "jointcheck.lambda")
    pair = _summary_pair(cfg, args.summaries if args.summaries else jc.get("summaries"))
    point = args.point if args.point else jc.get("point")
    if point is None or len(point) != 2:
        raise ConfigError("a two-dimensional point is required", field="jointcheck.point")
    n_sims = args.n_sims or int(jc.get("n_sims", 10_000))
    sims = simulate_predictive(cfg.model, lam, n_sims, [cfg.seed, JOINT_STREAM], threads=cfg.threads)
    result = joint_density_check(sims[:, pair], point)
    labels = [cfg.model.labels[j] for j in pair]
    result.update({"lambda": dict(zip(cfg.box.names, lam.natural().tolist())),
                   "summaries": labels, "point": [float(v) for v in point]})
    artifacts = [write_json(result, out / "jointcheck.json")]
    if cfg.plots:
        fig = create_joint_contour(sims[:, pair], point, labels)
        artifacts.append(save_figure(fig, out / "plots" / "jointcheck.svg"))
    write_manifest(out, cfg, "jointcheck", [a for a in artifacts if a is not None])
    print(f"Joint p-value of {result['point']} for ({labels[0]}, {labels[1]}): {result['pvalue']:.4f}")
    return EXIT_OK


def cmd_bank(args):
    if args.bank_command == "inspect":
        bank, box = load_bank(args.path)
        print(f"Bank {args.path}: N={bank.N} d={bank.d} J={bank.J}")
        print(f"Summaries: {', '.join(bank.labels)}")
        print(f"Degenerate rows: {bank.degenerate_count}")
        print(f"Rows per wave: {bank.provenance_counts()}")
        print(f"Distance scales: {np.round(bank.mad, 6).tolist()}")
        if box is not None:
            print(f"Box: {box.to_dict()}")
        return EXIT_OK

    cfg = _load(args)
    path = Path(args.path) if args.path else cfg.output / "bank.csv"
    if args.bank_command == "build":
        bank = build_bank(cfg.model, cfg.box, cfg.bank_size, cfg.seed, threads=cfg.threads,
                          center=cfg.bank_center, freeze_scale=cfg.freeze_scale)
    else:
        bank, _ = load_bank(path)
        if not args.points:
            raise ConfigError("--points is required for bank augment")
        frame = pd.read_csv(args.points)
        missing = [n for n in cfg.box.names if n not in frame.columns]
        if missing:
            raise ConfigError(f"points file lacks columns {missing}")
        points = [_lambda_point(cfg, row, "points") for row in frame[list(cfg.box.names)].to_numpy()]
        bank = augment_bank(bank, cfg.model, cfg.box, points, args.per_point, cfg.seed, args.wave,
                            threads=cfg.threads)
    save_bank(bank, path, cfg.box)
    write_manifest(path.parent, cfg, f"bank {args.bank_command}", [path, Path(str(path) + ".json")])
    print(f"Bank with {bank.N} rows written to {path}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="Output directory (overrides 'output')")
    common.add_argument("--seed", type=int, help="Base random seed")
    common.add_argument("--threads", type=int, help="Worker thread cap")
    common.add_argument("--deterministic", action="store_true", help="Force single-threaded reproducible runs")
    common.add_argument("--oracle", action="store_true", help="Score points by direct simulation")
    common.add_argument("--plots", action="store_true", help="Write SVG plots")
    common.add_argument("--log-level", default=os.environ.get("HMPRIOR_LOG_LEVEL", "INFO"),
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], type=str.upper)

    parser = _ArgumentParser(prog="hmprior", description="Prior elicitation by history matching")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    p = sub.add_parser("match", parents=[common], help="Run the wave search")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("grid", parents=[common], help="Emulated p-value map over a 2-D grid")
    p.add_argument("--resolution", type=int, nargs=2, metavar=("N1", "N2"))
    p.add_argument("--overlay", help="CSV of points to draw on the maps")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("validate", parents=[common], help="Oracle check at one hyperparameter value")
    p.add_argument("--lambda", dest="lam", type=float, nargs="+")
    p.add_argument("--n-sims", type=int)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("jointcheck", parents=[common], help="2-D joint predictive check")
    p.add_argument("--lambda", dest="lam", type=float, nargs="+")
    p.add_argument("--summaries", nargs=2)
    p.add_argument("--point", type=float, nargs=2)
    p.add_argument("--n-sims", type=int)
    p.set_defaults(func=cmd_jointcheck)

    p = sub.add_parser("bank", parents=[common], help="Build, augment or inspect a simulation bank")
    p.add_argument("bank_command", choices=["build", "augment", "inspect"])
    p.add_argument("--path", help="Bank CSV (sidecar header at <path>.json)")
    p.add_argument("--points", help="CSV of natural-scale points to augment at")
    p.add_argument("--per-point", type=int, default=100)
    p.add_argument("--wave", type=int, default=1)
    p.set_defaults(func=cmd_bank)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.command == "bank" and args.bank_command == "inspect" and not args.path:
        print("usage error: --path is required for bank inspect", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        return EXIT_ERROR
    except (HistoryMatchError, ValueError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
