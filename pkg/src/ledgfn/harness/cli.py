"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime abort (non-finite
loss, corrupt checkpoint).
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys

from ..diffcore import SeededRng
from ..envs.enumerate import DEFAULT_LIMIT, enumerate_terminals
from ..exceptions import ConfigError, EnumerationTooLarge, IntegrityError, RuntimeAbort
from ..metrics import goodness_of_fit
from .compare import compare
from .config import EnvConfig, RunConfig, load_config
from .presets import PRESETS, preset
from .trainer import Trainer, run

OUTPUT_ROOT_VAR = "LEDGFN_OUTPUT_ROOT"


def _output_dir(explicit, config: RunConfig) -> str:
    if explicit:
        return explicit
    root = os.environ.get(OUTPUT_ROOT_VAR)
    return os.path.join(root, config.output_dir) if root else config.output_dir


def _report(records, out):
    for rec in records:
        line = f"seed {rec.seed}: rounds={rec.rows[-1]['round'] if rec.rows else 0} modes={rec.final_modes}"
        if rec.fit is not None:
            line += f" l1={rec.fit.l1_distance:.6f} rme={rec.fit.relative_mean_error:.6f}"
        print(line)
    print(f"outputs in {out}")


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seeds:
        config = config.with_overrides([f"run.seeds={args.seeds}"])
    out = _output_dir(args.output, config)
    _report(run(config, out), out)
    return 0


def cmd_preset(args) -> int:
    config = preset(args.name, args.objective)
    if args.override:
        config = config.with_overrides(args.override)
    if args.write_config:
        with open(args.write_config, "w", encoding="utf-8") as fh:
            fh.write(config.to_text())
    if args.dry_run:
        sys.stdout.write(config.to_text())
        return 0
    out = _output_dir(args.output, config)
    _report(run(config, out), out)
    return 0


def cmd_compare(args) -> int:
    configs = [load_config(p) for p in args.configs]
    out = _output_dir(args.output, configs[0])
    configs = [c.with_overrides([f"run.output_dir={out}"]) for c in configs]
    table_path = os.path.join(out, "comparison.csv")
    _, table, _ = compare(configs, table_path, workers=args.workers)
    print(f"{len(table)} rows written to {table_path}")
    return 0


def _env_from_file(path) -> EnvConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    if not parser.has_section("env"):
        raise ConfigError(f"{path}: no [env] section")
    items = dict(parser.items("env"))
    return EnvConfig(items.pop("kind", "bag"), items)


def cmd_enumerate(args) -> int:
    env = _env_from_file(args.config).build()
    dist = enumerate_terminals(env, limit=args.limit)
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            dist.write_csv(fh)
        print(f"{len(dist)} terminal objects written to {args.output}")
    else:
        dist.write_csv(sys.stdout)
    return 0


def cmd_eval(args) -> int:
    trainer = Trainer.restore(args.checkpoint)
    print(f"checkpoint at round {trainer.round}, samples {trainer.samples}, modes {trainer.modes.count}")
    print(f"oracle calls: terminal={trainer.oracle.terminal_calls} intermediate={trainer.oracle.intermediate_calls}")
    if args.samples:
        report = goodness_of_fit(trainer.env, trainer.policy, args.samples, SeededRng(trainer.seed, 0xE7A1),
                                 exact=False, limit=args.limit)
    else:
        report = goodness_of_fit(trainer.env, trainer.policy, exact=True, limit=args.limit)
    print(f"l1={report.l1_distance:.6f} rme={report.relative_mean_error:.6f} samples={report.sample_count}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ledgfn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train every seed of a config file")
    p.add_argument("config")
    p.add_argument("--seeds", help="comma-separated seed list overriding the config")
    p.add_argument("--output", help=f"output directory (default: config output_dir under ${OUTPUT_ROOT_VAR})")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", help="run a named preset")
    p.add_argument("name", help=f"one of {', '.join(sorted(PRESETS))}")
    p.add_argument("--objective", help="train another objective on the preset's env")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    p.add_argument("--write-config", metavar="PATH")
    p.add_argument("--output")
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("compare", help="run several arms and write a comparison table")
    p.add_argument("configs", nargs="+")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--output")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("enumerate", help="write the exact terminal distribution of an env")
    p.add_argument("config", help="file with an [env] section")
    p.add_argument("--output")
    p.add_argument("--limit", type=int, default=DEFAULT_LIMIT)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("eval", help="goodness of fit of a checkpointed policy")
    p.add_argument("checkpoint")
    p.add_argument("--samples", type=int, default=0, help="sampled estimate instead of the exact marginal")
    p.add_argument("--limit", type=int, default=DEFAULT_LIMIT)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, EnumerationTooLarge, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeAbort, IntegrityError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
