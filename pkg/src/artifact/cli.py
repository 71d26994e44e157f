"""Command-line entry point: ``artifact <command> [options]``.

Exit status is 0 on success, 2 for usage errors (bad flags, unknown config
keys), 1 for runtime failures and 3 when the gradient-check suite fails.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from artifact.errors import ArtifactError, ConfigError
from artifact.io.config import KEYS, SCHEMA, Config, format_value, load_config
from artifact.io.formats import read_clips, read_clouds, sniff, write_clips, write_clouds
from artifact.numcore.rng import RngState

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_GRADCHECK = 0, 1, 2, 3
DISTANCE_METRICS = ("otdd", "otdd-stochastic", "mmd", "cka", "euclid")


class UsageError(Exception):
    pass


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError(f"seed must be a u64, got {text}")
    return v


def resolve_config(args) -> Config:
    conf = load_config(args.config)
    overrides = {}
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return conf.updated(overrides)


def _common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--config", metavar="PATH", help="flat key = value config file")
    p.add_argument("--seed", type=_seed, default=0, metavar="U64", help="master seed (default 0)")
    p.add_argument("--out", metavar="DIR", required=out_required, help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")


# commands ---------------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    from artifact.pipeline.experiment import load_data
    conf = resolve_config(args)
    data = load_data(conf, RngState(args.seed).child("data"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_clips(out / "train.pcv4", data.train)
    write_clips(out / "test.pcv4", data.test)
    write_clouds(out / "static.pc3d", data.static)
    (out / "config.txt").write_text(f"# seed {args.seed}\n" + conf.to_text())
    print(f"wrote {len(data.train)} train clips, {len(data.test)} test clips and "
          f"{len(data.static)} static clouds to {out}")
    return EXIT_OK


def _embed_file(path: str, params, mcfg, rng: RngState):
    from artifact.otdd import LabeledEmbeddingSet
    from artifact.model.network import static_embedding
    from artifact.pipeline.train import embed_all, encode_clips
    if sniff(path) == "PC3D":
        data = read_clouds(path)
        feats = static_embedding(data.clouds, params)
    else:
        data = read_clips(path)
        feats = embed_all(encode_clips(data.clips, data.labels, data.num_classes, mcfg, rng), params)
    return LabeledEmbeddingSet(feats, data.labels, data.num_classes)


def distance_value(metric: str, a, b, conf: Config, seed: int) -> float:
    from artifact import otdd
    if metric == "otdd":
        return otdd.otdd_exact(a, b, p=conf["ot.p"], epsilon=conf["ot.epsilon"], inner=conf["otdd.inner"],
                               max_iter=conf["ot.max_iter"], tol=conf["ot.tol"],
                               normalize_cost=conf["ot.normalize_cost"], debias=conf["ot.debias"])
    if metric == "otdd-stochastic":
        return otdd.otdd_class_weighted_stochastic(
            a, b, b=conf["otdd.b"], R=conf["otdd.R"], p=conf["ot.p"], epsilon=conf["ot.epsilon"],
            rng=RngState(seed).child("distance"), inner=conf["otdd.inner"], max_iter=conf["ot.max_iter"],
            tol=conf["ot.tol"], normalize_cost=conf["ot.normalize_cost"]).d
    if metric == "mmd":
        return otdd.mmd(a, b, conf["otdd.mmd_bandwidth"])
    if metric == "cka":
        return 1.0 - otdd.cka(a, b)
    return otdd.mean_euclidean(a, b)


def cmd_distance(args) -> int:
    from artifact.model.network import build_model
    from artifact.model.params import load_checkpoint
    from artifact.pipeline.experiment import model_config
    conf = resolve_config(args)
    mcfg = model_config(conf, 2)
    params = load_checkpoint(args.checkpoint) if args.checkpoint else \
        build_model(mcfg, RngState(args.seed).child("init"))
    # one neighbourhood stream for both sides, so a file against itself is exact
    a = _embed_file(args.first, params, mcfg, RngState(args.seed).child("neigh", "distance"))
    b = _embed_file(args.second, params, mcfg, RngState(args.seed).child("neigh", "distance"))
    print(format(distance_value(args.metric, a, b, conf, args.seed), ".12g"))
    return EXIT_OK


def _run_stage(args, stage: str) -> int:
    from artifact.model.params import load_checkpoint
    from artifact.pipeline.experiment import frozen_unchanged, run_experiment
    conf = resolve_config(args)
    init = load_checkpoint(args.init) if args.init else None
    result = run_experiment(conf, args.seed, stage=stage, out_dir=args.out, init=init)
    ok = frozen_unchanged(result.initial, result.params)
    s = result.summary()
    print(" ".join(f"{k}={'-' if v is None else format(v, '.6g')}" for k, v in s.items())
          + f" frozen_unchanged={str(ok).lower()}")
    if not ok:
        print("error: a frozen tensor changed during training", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_align(args) -> int:
    return _run_stage(args, "1")


def cmd_adapt(args) -> int:
    return _run_stage(args, "2")


def cmd_run(args) -> int:
    return _run_stage(args, args.stage)


def cmd_ablate(args) -> int:
    from artifact.pipeline.ablation import build_grid, rows_to_csv, read_table, run_ablation
    from artifact.report import summary_text
    conf = resolve_config(args)
    grid = args.grid or conf["ablate.grid"]
    seeds = conf["ablate.seeds"] if args.seeds is None else tuple(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = build_grid(conf, grid)
    rows = run_ablation(cells, seeds, out_dir=out / "cells")
    (out / "ablation.csv").write_text(rows_to_csv(rows))
    (out / "config.txt").write_text(f"# grid {grid}\n" + conf.to_text())
    (out / "summary.txt").write_text(summary_text({}, read_table(out / "ablation.csv")))
    failed = [r for r in rows if not r.ok]
    if failed:
        (out / "failures.txt").write_text("".join(f"{r.config_id} seed {r.seed}\n{r.error}\n" for r in failed))
    print((out / "summary.txt").read_text(), end="")
    if failed:
        print(f"error: {len(failed)} of {len(rows)} cells failed; see {out / 'failures.txt'}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from artifact import gradcheck
    names = args.names or list(gradcheck.CHECKS)
    unknown = [n for n in names if n not in gradcheck.CHECKS]
    if unknown:
        raise UsageError(f"unknown checks {unknown}; choose from {', '.join(gradcheck.CHECKS)}")
    failed = 0
    for name in names:
        res = gradcheck.run_suite([name], range(args.seeds))
        worst = max(res, key=lambda r: r.max_rel_error)
        status = "ok" if all(r.passed for r in res) else "FAIL"
        failed += status == "FAIL"
        print(f"{name:<16} {status:<4} max_rel_error={worst.max_rel_error:.3e} "
              f"(seed {worst.seed}, {worst.worst_input})")
    print(f"{len(names) - failed}/{len(names)} checks passed at tolerance {gradcheck.TOLERANCE:g}")
    return EXIT_GRADCHECK if failed else EXIT_OK


def _collect_report_inputs(paths):
    from artifact.pipeline.ablation import read_table
    from artifact.pipeline.metrics import read_metric_log
    logs, rows = {}, []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            if (p / "ablation.csv").exists():
                rows.extend(read_table(p / "ablation.csv"))
                for m in sorted((p / "cells").glob("*/metrics.jsonl")):
                    logs[m.parent.name] = read_metric_log(m)[0]
            elif (p / "metrics.jsonl").exists():
                logs[p.name] = read_metric_log(p / "metrics.jsonl")[0]
            else:
                raise UsageError(f"{p} holds neither metrics.jsonl nor ablation.csv")
        elif p.suffix == ".csv":
            rows.extend(read_table(p))
        else:
            logs[p.stem if p.stem != "metrics" else p.parent.name or p.stem] = read_metric_log(p)[0]
    return logs, rows


def cmd_report(args) -> int:
    from artifact.report import render
    logs, rows = _collect_report_inputs(args.inputs)
    for path in render(logs, args.out, rows or None):
        print(path)
    return EXIT_OK


def cmd_config(args) -> int:
    conf = resolve_config(args)
    for k in KEYS:
        print(f"{k} = {format_value(conf[k])}    # {SCHEMA[k][2]}")
    return EXIT_OK


# parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from artifact.pipeline.ablation import GRIDS
    from artifact.pipeline.experiment import STAGES
    parser = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-synth", help="write synthetic train/test clips and static clouds")
    _common(p, out_required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("distance", help="distance between two dataset files in embedding space")
    _common(p)
    p.add_argument("first", help="PC3D or PCV4 file")
    p.add_argument("second", help="PC3D or PCV4 file")
    p.add_argument("--metric", choices=DISTANCE_METRICS, default="otdd",
                   help="cka prints 1 - CKA so that identical sets give 0")
    p.add_argument("--checkpoint", metavar="PATH", help="embedders from a checkpoint (default: fresh init)")
    p.set_defaults(func=cmd_distance)

    for name, func, text in (("align", cmd_align, "stage 1 only: align the 4D embedder"),
                             ("adapt", cmd_adapt, "stage 2 only: tune embedder, adapters and head"),
                             ("run", cmd_run, "stage 1 then stage 2")):
        p = sub.add_parser(name, help=text)
        _common(p, out_required=True)
        p.add_argument("--init", metavar="PATH", help="start from a checkpoint")
        if name == "run":
            p.add_argument("--stage", choices=STAGES, default="both")
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", help="sweep a configuration grid over seeds")
    _common(p, out_required=True)
    p.add_argument("--grid", choices=GRIDS, help="default: ablate.grid from the config")
    p.add_argument("--seeds", type=int, nargs="+", help="default: ablate.seeds from the config")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="central-difference gradient checks")
    _common(p)
    p.add_argument("--names", nargs="+", help="subset of checks")
    p.add_argument("--seeds", type=int, default=10, help="seeds per check (default 10)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="render metric logs / ablation tables to CSV, text and PNG")
    _common(p, out_required=True)
    p.add_argument("inputs", nargs="+", help="metrics.jsonl files, ablation.csv files or run directories")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("config", help="print the resolved configuration with documentation")
    _common(p)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on bad flags
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArtifactError, OSError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
