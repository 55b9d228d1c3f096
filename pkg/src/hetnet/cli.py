"""``hetnet`` command-line workbench.

Run configs are JSON documents whose key paths mirror :class:`RunConfig`.
Values are layered: preset, then ``--config`` file, then ``--set a.b=value``
flags. The merged result is written to ``<output_dir>/config.resolved``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import datapipe, training
from .assembly import GRIDS, build_network, variant_config
from .efficiency import describe, efficiency_report, format_table
from .errors import ConfigurationError, InputError

log = logging.getLogger("hetnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _merge(base, update, prefix=""):
    for k, v in update.items():
        if k not in base:
            raise ConfigurationError(f"unknown config key {prefix + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _merge(base[k], v, f"{prefix}{k}.")
        else:
            base[k] = v


def resolve_config(preset="full", variant=None, config_file=None, overrides=(), output_dir=None):
    """Build a validated RunConfig from the preset, a JSON file and ``key=value`` overrides."""
    if preset == "desk":
        cfg = training.desk_config(variant or "HetNet")
    elif preset == "full":
        cfg = training.RunConfig()
        if variant:
            cfg.network = variant_config(variant, "full")
    else:
        raise ConfigurationError(f"unknown preset {preset!r}")
    d = cfg.to_dict()
    if config_file:
        try:
            _merge(d, json.loads(Path(config_file).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{config_file}: {exc}") from exc
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        training.set_path(d, key.strip(), value)
    if output_dir:
        d["output_dir"] = str(output_dir)
    try:
        cfg = training.RunConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc
    cfg.validate()
    return cfg


def _config_args(p):
    p.add_argument("--preset", choices=["full", "desk"], default="full",
                   help="full: full-scale recipe; desk: tiny backbone on synthetic scenes")
    p.add_argument("--variant", help="network variant (HetNet, A_a, A_b, A_ba, I..V)")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides")
    p.add_argument("--output-dir")


def _cfg(args):
    return resolve_config(args.preset, args.variant, args.config, args.overrides, args.output_dir)


# ---------------------------------------------------------------- subcommands

def cmd_train(args):
    cfg = _cfg(args)
    ckpt = training.train(cfg, resume=args.resume)
    print(ckpt)


def cmd_eval(args):
    report = training.evaluate(args.checkpoint, args.data, args.split, input_size=args.input_size,
                               threshold=args.threshold, with_max=args.max_f)
    print(report.table())
    out = Path(args.report) if args.report else Path(args.checkpoint).parent.parent / "logs" / "eval.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_csv())


def cmd_predict(args):
    out = args.out or Path(args.checkpoint).parent.parent / "predictions"
    written = training.predict(args.checkpoint, args.source, out, args.input_size)
    print(f"wrote {2 * len(written)} files to {out}")


def _network(args):
    if args.checkpoint:
        return training.load_checkpoint(args.checkpoint)[0]
    return build_network(variant_config(args.variant, args.scale))


def cmd_bench(args):
    net = _network(args)
    size = (args.input_size, args.input_size)
    rep = efficiency_report(net, size, args.warmup, args.iters)
    row = rep.as_row()
    print(f"{'Para.(M)':>9} {'FLOPs(G)':>9} {'FPS':>8}  input")
    print(f"{row['Para.']:>9.2f} {row['FLOPs']:>9.2f} {row['FPS']:>8.2f}  {row['input']}")
    print(f"# {rep.device_descriptor} warmup={rep.warmup_iters} timed={rep.timed_iters}")
    print(",".join(row))
    print(",".join(str(v) for v in row.values()))


def cmd_describe(args):
    net = _network(args)
    print(format_table(describe(net, (args.input_size, args.input_size))))


def cmd_ablate(args):
    if args.preset == "full" and not args.config and not args.overrides:
        log.info("no data given; running the desk preset")
        args.preset = "desk"
    base = _cfg(args)
    out = Path(base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(json.dumps(base.to_dict(), indent=2, sort_keys=True) + "\n")
    rows = training.ablate(args.grid, base, fps_iters=args.fps_iters)
    print(training.format_results(rows))


def cmd_synth(args):
    recs = datapipe.generate_synthetic(args.n, args.size, args.seed, prefix=args.split)
    datapipe.write_dataset(recs, args.out, args.split)
    print(f"wrote {len(recs)} scenes to {Path(args.out) / args.split}")


def cmd_ingest(args):
    n = datapipe.ingest(args.src, args.dst, args.split)
    print(f"ingested {n} pairs into {Path(args.dst) / args.split}")


def build_parser():
    p = _Parser(prog="hetnet", description="Mirror detection workbench")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="train a network")
    _config_args(s)
    s.add_argument("--resume", help="checkpoint to continue from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--data", help="dataset root (default: the run's own validation data)")
    s.add_argument("--split", default="test")
    s.add_argument("--input-size", type=int)
    s.add_argument("--threshold", type=lambda v: v if v == "adaptive" else float(v))
    s.add_argument("--max-f", action="store_true", help="also report max F_beta over thresholds")
    s.add_argument("--report", help="CSV output path")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="write probability maps and masks")
    s.add_argument("checkpoint")
    s.add_argument("source", help="image file or directory")
    s.add_argument("--out")
    s.add_argument("--input-size", type=int)
    s.set_defaults(func=cmd_predict)

    for name, func, help_ in (("bench", cmd_bench, "parameters, MACs and FPS"),
                              ("describe", cmd_describe, "per-layer shape, parameter and MAC table")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--checkpoint")
        s.add_argument("--variant", default="HetNet")
        s.add_argument("--scale", choices=["tiny", "full"], default="full")
        s.add_argument("--input-size", type=int, default=352)
        if name == "bench":
            s.add_argument("--warmup", type=int, default=20)
            s.add_argument("--iters", type=int, default=100)
        s.set_defaults(func=func)

    s = sub.add_parser("ablate", help="train and evaluate every row of an ablation grid")
    s.add_argument("grid", choices=sorted(GRIDS))
    _config_args(s)
    s.add_argument("--fps-iters", type=int, default=20)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("synth-data", help="write synthetic mirror scenes")
    s.add_argument("out")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", default="train")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="normalize an image/mask archive into <dst>/<split>")
    s.add_argument("src")
    s.add_argument("dst")
    s.add_argument("--split", default="train")
    s.set_defaults(func=cmd_ingest)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"hetnet: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigurationError, InputError, UsageError) as exc:
        print(f"hetnet: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a failure of the run itself
        log.debug("traceback", exc_info=True)
        print(f"hetnet: failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
