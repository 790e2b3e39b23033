"""Command-line interface.

Precedence for every configuration key: built-in default < config file
(--config) < environment (EHREMBED_<KEY>) < command-line flag. Flags
mirror config keys one-to-one; `--help` on any subcommand lists them with
their defaults.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric or
internal contract failure.
"""

import argparse
import sys
from dataclasses import fields

from . import pipeline
from .config import Config
from .errors import (ConfigurationError, ContractError, DataError, DimensionError,
                     NumericError)

_SUBCOMMANDS = {
    "synth": ("generate the two synthetic hospitals and the toy diagnosis mapping",
              pipeline.cmd_synth),
    "preprocess": ("parse one hospital directory and write its cohort file",
                   pipeline.cmd_preprocess),
    "train": ("train one encoder/strategy/task combination on a cohort",
              pipeline.cmd_train),
    "transfer": ("evaluate/fine-tune a trained run on a different hospital's cohort",
                 pipeline.cmd_transfer),
    "pool": ("train one model on two cohorts jointly and test on each",
             pipeline.cmd_pool),
    "evaluate": ("re-evaluate a finished run on a cohort's test split",
                 pipeline.cmd_evaluate),
    "report": ("aggregate finished runs into tables and figures",
               pipeline.cmd_report),
    "selfcheck": ("run the gradient-check and metric-oracle suites",
                  pipeline.cmd_selfcheck),
}


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="FILE", default=None,
                        help="configuration file (sections: paths, experiment, synth, vocab)")
    defaults = Config()
    for section, key, value in defaults.flat_items():
        flag = "--" + key.replace("_", "-")
        parser.add_argument(flag, dest=f"cfg_{key}", default=None, metavar=key.upper(),
                            help=f"[{section}] default: {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehrembed",
        description="Code-agnostic EHR representation learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (help_text, _) in _SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        _add_config_flags(p)
    # pretrain carries a positional mode argument
    p = sub.add_parser("pretrain",
                       help="pretrain a text encoder (mlm) or a code table (skipgram)")
    p.add_argument("mode", choices=["mlm", "skipgram"])
    _add_config_flags(p)
    return parser


def resolve_config(args: argparse.Namespace) -> Config:
    config = Config.load(args.config) if args.config else Config()
    config.apply_env()
    for key, value in vars(args).items():
        if key.startswith("cfg_") and value is not None:
            config.set_key(key[4:], value)
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        if args.command == "pretrain":
            pipeline.cmd_pretrain(config, args.mode)
        else:
            _SUBCOMMANDS[args.command][1](config)
        return 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, DimensionError, ContractError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
