"""Command-line entry point: ``quafl-sim``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields

from ..config import ConfigError, RunConfig, TaskSpec, TimingProfile
from .grid import run_grid
from .presets import PRESETS, preset


def _int_or(word):
    def conv(text):
        return word if text == word else int(text)
    conv.__name__ = f"int or {word!r}"
    return conv


def _float_or(word):
    def conv(text):
        return word if text == word else float(text)
    conv.__name__ = f"number or {word!r}"
    return conv


def _optional(typ):
    def conv(text):
        return None if text.lower() == "none" else typ(text)
    conv.__name__ = f"{typ.__name__} or 'none'"
    return conv


_TOP_TYPES = {
    "n": int, "s": int, "K": int,
    "b": _int_or("lossless"),
    "quant_window": float,
    "eta": _float_or("theorem"),
    "T": _optional(int),
    "horizon": _optional(float),
    "swt": float, "sit": float,
    "failure_mode": str,
}
_SUB_TYPES = {int: int, float: float, str: str}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    defaults, timing, task = RunConfig(), TimingProfile(), TaskSpec()
    p = argparse.ArgumentParser(
        prog="quafl-sim",
        description="Discrete-event simulator for quantized asynchronous federated learning.",
        epilog="Presets: " + "; ".join(f"{k}: {v.description}" for k, v in PRESETS.items()),
    )
    p.add_argument("--config", metavar="PATH", help="JSON run configuration; flags override its values")
    p.add_argument("--preset", metavar="NAME", help="named scenario grid; flags override every config in it")
    p.add_argument("--seed-list", metavar="S1,S2,...", help=f"comma-separated seeds (default: {defaults.seeds})")
    p.add_argument("--jobs", type=int, default=1, help="grid cells run in parallel (default: 1)")
    p.add_argument("--out", metavar="DIR", help="output directory (default: $QUAFL_SIM_OUT or ./quafl_out)")
    p.add_argument("--strict-quantization", action="store_true",
                   help="abort a run at its first decode failure (failure_mode=strict)")
    p.add_argument("--algo", choices=("quafl", "fedavg", "baseline"), help=f"(default: {defaults.algo})")
    p.add_argument("--print-config", action="store_true", help="print the resolved configs as JSON and exit")

    g = p.add_argument_group("run parameters")
    for name, typ in _TOP_TYPES.items():
        g.add_argument(_flag(name), dest=name, type=typ, default=None,
                       help=f"(default: {getattr(defaults, name)})")
    for prefix, obj in (("timing", timing), ("task", task)):
        g = p.add_argument_group(f"{prefix} parameters")
        for f in fields(obj):
            default = getattr(obj, f.name)
            g.add_argument(_flag(f"{prefix}_{f.name}"), dest=f"{prefix}.{f.name}", type=type(default), metavar=f.name.upper(),
                           default=None, help=f"(default: {default})")
    return p


def _overrides(args) -> dict:
    top, sub = {}, {"timing": {}, "task": {}}
    for key, value in vars(args).items():
        if value is None:
            continue
        if "." in key:
            head, tail = key.split(".", 1)
            sub[head][tail] = value
        elif key in _TOP_TYPES or key == "algo":
            top[key] = value
    if args.seed_list:
        top["seeds"] = [int(x) for x in args.seed_list.split(",") if x.strip()]
    if args.strict_quantization:
        top["failure_mode"] = "strict"
    return {**top, **{k: v for k, v in sub.items() if v}}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if k in ("timing", "task"):
            cur = out.get(k, {})
            cur = {"kind": cur} if isinstance(cur, str) else dict(cur)
            cur.update(v)
            out[k] = cur
        else:
            out[k] = v
    return out


def parse_config(path=None, overrides=None) -> RunConfig:
    """Config file (if any) with flag overrides applied, validated."""
    data = {}
    if path is not None:
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("<root>", "config file must hold a JSON object")
    return RunConfig.from_dict(_merge(data, overrides or {}))


def resolve_configs(args) -> list:
    over = _overrides(args)
    if args.preset:
        if args.config:
            raise ConfigError("--config", "use either --config or --preset, not both")
        return [RunConfig.from_dict(_merge(c.to_dict(), over)) for c in preset(args.preset)]
    return [parse_config(args.config, over)]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configs = resolve_configs(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"quafl-sim: error: {exc}", file=sys.stderr)
        return 2
    if args.print_config:
        json.dump([c.to_dict() for c in configs], sys.stdout, indent=2)
        print()
        return 0
    out = args.out or os.environ.get("QUAFL_SIM_OUT") or "quafl_out"
    result = run_grid(configs, parallelism=max(1, args.jobs), out_dir=out)
    for f in result.failures:
        print(f"quafl-sim: decode failure in {f['run_id']} (seed {f['seed']}) at server step {f['t']}",
              file=sys.stderr)
    print(f"wrote {len(result.csv_paths)} run(s) and {result.summary_path}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
