"""Command-line entry point.

    gspdr train --config run.cfg --set gamma=0.95 --set env.horizon_steps=48 --out runs/a
    gspdr evaluate --checkpoint runs/a/seed_0/checkpoint.npz --episodes 5
    gspdr compare runs/a runs/b
    gspdr export-heatmap runs/a
    gspdr gen-prices --seed 3 --hours 72 --out prices.csv

Config files are either JSON (nested sections or dotted keys) or flat text
with one ``key = value`` per line and ``#`` comments. Keys are dotted paths
into the run configuration (``agent.gamma``); a bare leaf name (``gamma``)
is accepted when only one section has it. Values in flat files and
``--set`` are read as JSON when possible (``[0, 1]``, ``true``, ``null``)
and as plain strings otherwise.

Errors print ``<category>: <message>`` on stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import typing
from pathlib import Path

from . import env as E
from . import harness as H
from .ddpg import AgentParams
from .errors import ConfigError, GspdrError, ParseError, UsageError, ValidationError
from .gsp import PlannerConfig, load_graph, write_heatmap

SECTIONS = {"env": E.EnvParams, "agent": AgentParams, "gsp": PlannerConfig,
            "price": H.PriceConfig}


def _schema() -> dict[str, typing.Any]:
    """Dotted key -> annotated type, for every settable field."""
    out = {}
    top = typing.get_type_hints(H.RunConfig)
    for name, tp in top.items():
        if name not in SECTIONS:
            out[name] = tp
    for sec, cls in SECTIONS.items():
        for name, tp in typing.get_type_hints(cls).items():
            if name in {f.name for f in dataclasses.fields(cls)}:
                out[f"{sec}.{name}"] = tp
    return out


SCHEMA = _schema()


def resolve_key(key: str) -> str:
    key = key.strip()
    if key in SCHEMA:
        return key
    hits = [k for k in SCHEMA if k.rsplit(".", 1)[-1] == key]
    if len(hits) == 1:
        return hits[0]
    if hits:
        raise ConfigError(f"ambiguous key {key!r}: could be {', '.join(sorted(hits))}")
    raise ConfigError(f"unknown key {key!r}")


def _type_name(tp) -> str:
    return getattr(tp, "__name__", None) or str(tp).replace("typing.", "")


def coerce(key: str, value, tp=None):
    """Check ``value`` against the schema type of ``key``; returns the typed value."""
    tp = tp or SCHEMA[key]
    origin, args = typing.get_origin(tp), typing.get_args(tp)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        if value is None and type(None) in args:
            return None
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return coerce(key, value, a)
            except ValidationError as exc:
                errors.append(exc)
        raise errors[-1]
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ValidationError(f"{key}: expected a list, got {value!r}")
        return origin(coerce(key, v, args[0]) for v in value)
    if tp is bool:
        if isinstance(value, bool):
            return value
    elif tp is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif tp is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif tp is str:
        if isinstance(value, str):
            return value
    raise ValidationError(f"{key}: expected {_type_name(tp)}, got {value!r}")


def _parse_scalar(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        path = f"{prefix}{k}"
        if isinstance(v, dict) and path in SECTIONS:
            out.update(_flatten(v, path + "."))
        else:
            out[path] = v
    return out


def read_config_file(path) -> dict:
    """Raw (unresolved) key -> value pairs from a JSON or flat-text file."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text()
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=exc.lineno) from None
        return _flatten(data)
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", line=lineno)
        key, value = line.split("=", 1)
        if not key.strip():
            raise ParseError("empty key", line=lineno)
        out[key.strip()] = _parse_scalar(value)
    return out


def parse_overrides(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = _parse_scalar(value)
    return out


def build_config(file_values: dict, overrides: dict, out_dir=None) -> H.RunConfig:
    """Defaults, then the config file, then overrides; validated."""
    merged = {}
    for raw in (file_values, overrides):
        for key, value in raw.items():
            full = resolve_key(key)
            merged[full] = coerce(full, value)
    nested: dict = {}
    for key, value in merged.items():
        if "." in key:
            sec, name = key.split(".", 1)
            nested.setdefault(sec, {})[name] = value
        else:
            nested[key] = value
    if out_dir is not None:
        nested["out_dir"] = str(out_dir)
    try:
        cfg = H.RunConfig.from_dict(nested)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


# ---------------------------------------------------------------- subcommands

def cmd_train(args) -> int:
    values = read_config_file(args.config) if args.config else {}
    cfg = build_config(values, parse_overrides(args.set), args.out)
    out = Path(cfg.out_dir)
    results = H.train(cfg, out)
    for res in results:
        last = res.metrics[-10:]
        rate = sum(m.satisfied for m in last) / len(last)
        print(f"seed {res.seed}: final return {res.metrics[-1].return_:.3f}, "
              f"satisfied {rate:.0%} of last {len(last)} episodes")
    print(f"wrote {out}")
    return 0


def cmd_evaluate(args) -> int:
    report = H.evaluate(args.checkpoint, args.episodes)
    summary = {k: v for k, v in report.items() if k not in ("trajectories", "returns")}
    print(json.dumps(summary, indent=2))
    return 0


def cmd_compare(args) -> int:
    print(H.compare(args.dirs, fraction=args.fraction, window=args.window).format())
    return 0


def cmd_export_heatmap(args) -> int:
    run = Path(args.dir)
    if not run.is_dir():
        raise UsageError(f"not a run directory: {run}")
    cfg_path = run / "config.json"
    if cfg_path.exists() and json.loads(cfg_path.read_text()).get("algorithm") == "ddpg":
        raise UsageError(f"{run} is a DDPG-only run; it has no goal values")
    seed_dirs = sorted(d for d in run.glob("seed_*") if d.is_dir())
    graphs = [d / "graph.json" for d in seed_dirs]
    if not graphs or not any(g.exists() for g in graphs):
        raise UsageError(f"no graph.json under {run}")
    for g in graphs:
        if not g.exists():
            raise UsageError(f"missing graph file {g}")
        graph, grid = load_graph(g)
        target = g.parent / "values_heatmap.csv"
        write_heatmap(graph, grid, target)
        print(f"wrote {target}")
    return 0


def cmd_gen_prices(args) -> int:
    if args.hours < 1:
        raise UsageError("--hours must be >= 1")
    profile = E.generate_price_profile(args.seed, args.hours)
    E.save_price_profile(profile, args.out)
    print(f"wrote {args.out} ({len(profile)} prices)")
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gspdr", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one algorithm over the configured seeds")
    p.add_argument("--config", help="flat key=value or JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a key")
    p.add_argument("--out", help="output directory (default: out_dir from config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="noise-free rollouts of a saved actor")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="aligned learning curves of several runs")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--fraction", type=float, default=0.8)
    p.add_argument("--window", type=int, default=5)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export-heatmap", help="rewrite values_heatmap.csv from saved graphs")
    p.add_argument("dir")
    p.set_defaults(func=cmd_export_heatmap)

    p = sub.add_parser("gen-prices", help="write a synthetic price profile")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--hours", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_prices)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GspdrError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
