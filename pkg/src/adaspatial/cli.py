"""``adaspatial`` command line.

Usage::

    adaspatial <mode> [--config FILE] [--out DIR] [--seed N] [--section.key=value ...]

Exit codes: 0 success, 1 configuration or input error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys

from .data import DatasetError, SpecError
from .experiment import MODES, ConfigError, load_config, parse_value
from .runner import OUTPUT_ROOT_ENV, RunFailure, output_dir, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaspatial",
        description="Adaptive spatial weighting lab: LAW loss reweighting and ORDER skip attention.",
        epilog=f"Dotted overrides such as --order.attn_stages=[0,1] patch the config. "
               f"Default output root comes from ${OUTPUT_ROOT_ENV} (else ./runs).",
    )
    sub = parser.add_subparsers(dest="mode", required=True, metavar="MODE")
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run the {mode} experiment")
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    return parser


def _overrides(extra: list[str]) -> list[tuple[str, object]]:
    pairs = []
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"unrecognised argument {item!r}; overrides look like --section.key=value")
        key, value = item[2:].split("=", 1)
        pairs.append((key, parse_value(value)))
    return pairs


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        overrides = _overrides(extra)
        if args.seed is not None:
            overrides.append(("seed", args.seed))
        if args.out is not None:
            overrides.append(("output_dir", args.out))
        cfg = load_config(args.config, args.mode, overrides)
        if args.print_config:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return EXIT_OK
        report = run_experiment(cfg)
    except (ConfigError, DatasetError, SpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunFailure as exc:
        print(f"run failed: {exc} (diagnostic in {output_dir(cfg)}/diagnostic.json)", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"mode": report["mode"], "output_dir": str(output_dir(cfg)),
                      "metrics": _headline(report)}, sort_keys=True))
    return EXIT_OK


def _headline(report: dict) -> dict:
    m = report["metrics"]
    return {k: v for k, v in m.items() if isinstance(v, (int, float, str, bool))}


if __name__ == "__main__":
    sys.exit(main())
