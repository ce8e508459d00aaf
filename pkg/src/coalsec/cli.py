"""Command-line front end: ``coalsec simulate|sweep|stability|mobility|rerun``.

Configuration files are plain text, one ``key = value`` per line, ``#``
starts a comment. Keys are the :class:`SimConfig` field names plus two
unit-converted forms: ``noise_dbm`` (instead of ``noise_power`` in W) and
``exchange_snr_db`` (instead of ``exchange_snr``). An empty file gives the
default configuration.

Every command writes its data files and a ``manifest.json`` into ``--out``.
The manifest holds the resolved configuration in linear units and every
input that affects the outputs, so ``coalsec rerun manifest.json --out DIR``
reproduces the files byte for byte. Diagnostics go to stderr only.

Exit codes: 0 success, 1 configuration or input error, 2 engine error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from coalsec import __version__
from coalsec.channel import CoincidentNodesError, ConfigError, Deployment, SimConfig
from coalsec.game import (
    CombinatorialLimitError,
    FormationEngine,
    FormationTrace,
    NonTerminationError,
    PartitionError,
    singletons,
)
from coalsec.scenario import (
    MobilityTrace,
    aggregate,
    drop_channel,
    drop_records,
    drop_seed,
    run_mobility,
)
from coalsec.secrecy import CoalitionSizeError, value_breakdown
from coalsec.stability import stability_report

CSV_SCHEMA_VERSION = 1

SWEEP_COLUMNS = ["n_users", "drops", "mean_coop", "stderr_coop", "mean_noncoop", "stderr_noncoop",
                 "improvement_pct", "grand_coalition_rate", "mean_sweeps", "mean_coalition_size"]
DROP_COLUMNS = ["n_users", "drop", "seed", "avg_coop_utility", "avg_noncoop_utility",
                "improvement_pct", "n_coalitions", "largest_coalition", "sweeps"]
USER_COLUMNS = ["user", "x", "y", "destination", "coalition", "coop_payoff", "noncoop_payoff",
                "gain", "cost", "data_power", "exchange_power"]
MOBILITY_COLUMNS = ["time", "user", "x", "y", "coalition", "members", "payoff"]

_UNIT_KEYS = {"noise_dbm": "noise_power", "exchange_snr_db": "exchange_snr"}
_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}


class InputError(Exception):
    """Bad command-line input or input file; reported with exit code 1."""


# -- configuration --------------------------------------------------------------

def _convert(key: str, raw: str):
    kind = _FIELDS[key].type
    try:
        if kind == "int":
            value = int(raw)
        elif kind == "float":
            value = float(raw)
        else:
            return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r}") from None
    if key == "rng_seed":
        if value < 0:
            raise ConfigError(key, "must be non-negative")
    elif not value > 0:
        raise ConfigError(key, "must be positive")
    return value


def parse_config_text(text: str) -> SimConfig:
    values: dict[str, object] = {}
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in seen:
            raise ConfigError(key, f"line {lineno}: duplicate key")
        seen.add(key)
        if key in _UNIT_KEYS:
            target = _UNIT_KEYS[key]
            if target in seen:
                raise ConfigError(key, f"conflicts with {target}")
            try:
                level = float(raw)
            except ValueError:
                raise ConfigError(key, f"cannot parse {raw!r}") from None
            if not math.isfinite(level):
                raise ConfigError(key, "must be finite")
            values[target] = 10 ** ((level - 30) / 10) if key == "noise_dbm" else 10 ** (level / 10)
        elif key in _FIELDS:
            if any(unit in seen for unit, t in _UNIT_KEYS.items() if t == key):
                raise ConfigError(key, "conflicts with its unit-converted form")
            values[key] = _convert(key, raw)
        else:
            raise ConfigError(key, "unknown key")
    return SimConfig(**values)


def parse_config(path) -> SimConfig:
    """Read a ``key = value`` configuration file; see the module docstring for the grammar."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text)


# -- output helpers -------------------------------------------------------------

def _num(x) -> str:
    x = float(x)
    return "-inf" if x == -math.inf else repr(x)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


def _json_payoff(x: float):
    return None if x == -math.inf else float(x)


def _members(coalition) -> str:
    return " ".join(str(u) for u in coalition)


class Outputs:
    """Collects output files in memory and writes them together at the end."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def write(self, manifest: dict) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        manifest = dict(manifest, outputs=sorted(self.files) + ["manifest.json"])
        self.files["manifest.json"] = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        for name, text in self.files.items():
            (self.out_dir / name).write_text(text)


# -- commands -------------------------------------------------------------------

def _formed_drop(cfg: SimConfig):
    ch = drop_channel(cfg)
    engine = FormationEngine(ch, cfg)
    outcome = engine.run_round(singletons(ch.n_users))
    return ch, engine, outcome


def _snapshot(cfg: SimConfig, ch, engine, outcome) -> tuple[str, str]:
    noncoop = engine.value.singleton
    label = {u: k for k, C in enumerate(outcome.partition) for u in C}
    coop = [outcome.payoffs[u] for u in range(ch.n_users)]
    lines = [
        f"n_users = {ch.n_users}",
        f"seed = {cfg.rng_seed}",
        f"sweeps = {outcome.trace.sweeps}",
        f"avg_coop_utility = {_num(np.mean(coop))}",
        f"avg_noncoop_utility = {_num(np.mean(noncoop))}",
        "",
        "[destinations]",
        *(f"{m} = {json.dumps([float(v) for v in p])}" for m, p in enumerate(ch.positions.dest_pos)),
        "",
        "[eavesdroppers]",
        *(f"{k} = {json.dumps([float(v) for v in p])}" for k, p in enumerate(ch.positions.eve_pos)),
    ]
    rows = []
    for k, C in enumerate(outcome.partition):
        breakdown = value_breakdown(C, ch, cfg)
        lines += ["", f"[coalition {k}]", f"members = {json.dumps(list(C))}"]
        for u in C:
            mv = breakdown[u]
            pos = [float(v) for v in ch.positions.user_pos[u]]
            entry = {
                "position": pos, "destination": int(ch.assignment[u]),
                "payoff": _json_payoff(outcome.payoffs[u]), "noncoop_payoff": float(noncoop[u]),
                "gain": float(mv.gain), "cost": float(mv.cost),
                "data_power": float(mv.data_power), "exchange_power": float(mv.exchange_power),
            }
            lines.append(f"user {u} = {json.dumps(entry, sort_keys=True)}")
        for u in C:
            mv = breakdown[u]
            x, y = ch.positions.user_pos[u]
            rows.append([u, _num(x), _num(y), int(ch.assignment[u]), label[u], _num(outcome.payoffs[u]),
                         _num(noncoop[u]), _num(mv.gain), _num(mv.cost), _num(mv.data_power),
                         _num(mv.exchange_power)])
    rows.sort(key=lambda r: r[0])
    return "\n".join(lines) + "\n", _csv(USER_COLUMNS, rows)


def cmd_simulate(cfg: SimConfig, args: dict, out: Outputs) -> None:
    ch, engine, outcome = _formed_drop(cfg)
    snapshot, users = _snapshot(cfg, ch, engine, outcome)
    out.add("snapshot.txt", snapshot)
    out.add("users.csv", users)
    out.add("trace.jsonl", outcome.trace.to_jsonl())


def cmd_stability(cfg: SimConfig, args: dict, out: Outputs) -> None:
    ch, engine, outcome = _formed_drop(cfg)
    report = stability_report(outcome.partition, ch, cfg)
    text = f"partition = {json.dumps([list(C) for C in outcome.partition])}\n" + report.to_text()
    out.add("stability.txt", text)


def cmd_sweep(cfg: SimConfig, args: dict, out: Outputs, workers: int = 1) -> None:
    summary, per_drop = [], []
    for n in args["n_list"]:
        records = drop_records(cfg, n, args["drops"], workers)
        row = aggregate(records)
        summary.append([row.n_users, row.drops] + [_num(getattr(row, c)) for c in SWEEP_COLUMNS[2:]])
        for r in records:
            per_drop.append([r.n_users, r.drop, drop_seed(cfg.rng_seed, n, r.drop), _num(r.avg_coop_utility),
                             _num(r.avg_noncoop_utility), _num(r.improvement_pct), len(r.partition),
                             max(len(c) for c in r.partition), r.sweeps])
    out.add("sweep.csv", _csv(SWEEP_COLUMNS, summary))
    out.add("drops.csv", _csv(DROP_COLUMNS, per_drop))


def load_trace(data: dict) -> tuple[MobilityTrace, Deployment | None]:
    """Build a mobility trace, and optionally a fixed deployment, from parsed JSON."""
    try:
        waypoints = {int(u): [(float(t), (float(p[0]), float(p[1]))) for t, p in pts]
                     for u, pts in data["waypoints"].items()}
        trace = MobilityTrace(waypoints, float(data["period"]), float(data.get("start", 0.0)),
                              None if data.get("end") is None else float(data["end"]))
        deployment = None
        if "users" in data:
            deployment = Deployment.nearest(data["users"], data["destinations"], data["eavesdroppers"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise InputError(f"invalid mobility trace: {exc}") from None
    return trace, deployment


def cmd_mobility(cfg: SimConfig, args: dict, out: Outputs) -> None:
    trace, deployment = load_trace(args["trace"])
    if deployment is not None:
        if deployment.n_users != cfg.n_users or len(deployment.eve_pos) != cfg.K:
            cfg = dataclasses.replace(cfg, n_users=deployment.n_users,
                                      n_destinations=len(deployment.dest_pos),
                                      n_eavesdroppers=len(deployment.eve_pos))
    try:
        snapshots = run_mobility(cfg, trace, deployment)
    except ValueError as exc:
        if isinstance(exc, (ConfigError, CoalitionSizeError, CoincidentNodesError, PartitionError)):
            raise
        raise InputError(str(exc)) from None
    rows, events = [], FormationTrace()
    for snap in snapshots:
        label = {u: k for k, C in enumerate(snap.partition) for u in C}
        for u in range(len(snap.user_pos)):
            x, y = snap.user_pos[u]
            rows.append([_num(snap.time), u, _num(x), _num(y), label[u],
                         _members(snap.partition[label[u]]), _num(snap.payoffs[u])])
        events.events.extend(snap.events)
    out.add("mobility.csv", _csv(MOBILITY_COLUMNS, rows))
    out.add("trace.jsonl", events.to_jsonl())


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "stability": cmd_stability,
            "mobility": cmd_mobility}


def execute(command: str, cfg: SimConfig, args: dict, out_dir, workers: int = 1) -> dict:
    """Run ``command`` and write its outputs plus manifest into ``out_dir``; returns the manifest."""
    out = Outputs(Path(out_dir))
    if command == "sweep":
        cmd_sweep(cfg, args, out, workers)
    else:
        COMMANDS[command](cfg, args, out)
    manifest = {
        "tool": "coalsec",
        "version": __version__,
        "csv_schema": CSV_SCHEMA_VERSION,
        "command": command,
        "seed": cfg.rng_seed,
        "config": cfg.as_dict(),
        "args": args,
    }
    out.write(manifest)
    return manifest


# -- argument handling ----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def _n_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("network sizes must be positive")
    return values


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coalsec", description="Secrecy-driven coalition formation simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key = value configuration file (defaults if omitted)")
        p.add_argument("--seed", type=int, help="run seed; overrides rng_seed from the config")
        p.add_argument("--out", required=True, help="output directory")

    for name, text in [("simulate", "one drop: final partition and payoff breakdown"),
                       ("stability", "one drop: stability report of the formed partition")]:
        common(sub.add_parser(name, help=text))
    p = sub.add_parser("sweep", help="average utilities against network size")
    common(p)
    p.add_argument("--n-list", type=_n_list, default=[10, 20, 30, 45], help="comma-separated N values")
    p.add_argument("--drops", type=_positive, default=200, help="drops per N")
    p.add_argument("--workers", type=_positive, default=1, help="worker processes for drops")
    p = sub.add_parser("mobility", help="re-form coalitions along a mobility trace")
    common(p)
    p.add_argument("--trace", required=True, help="JSON mobility trace")
    p = sub.add_parser("rerun", help="reproduce the outputs described by a manifest")
    p.add_argument("manifest", help="manifest.json written by an earlier run")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=_positive, default=1, help="worker processes for sweep drops")
    return parser


def _from_args(ns) -> tuple[str, SimConfig, dict]:
    if ns.command == "rerun":
        try:
            manifest = json.loads(Path(ns.manifest).read_text())
            command, config, args = manifest["command"], manifest["config"], manifest["args"]
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"unreadable manifest {ns.manifest}: {exc}") from None
        unknown = set(config) - set(_FIELDS)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown key in manifest")
        if command not in COMMANDS:
            raise InputError(f"unknown command in manifest: {command!r}")
        return command, SimConfig(**config), args
    cfg = parse_config(ns.config) if ns.config else SimConfig()
    if ns.seed is not None:
        if ns.seed < 0:
            raise ConfigError("seed", "must be non-negative")
        cfg = dataclasses.replace(cfg, rng_seed=ns.seed)
    args: dict = {}
    if ns.command == "sweep":
        args = {"n_list": ns.n_list, "drops": ns.drops}
    elif ns.command == "mobility":
        try:
            args = {"trace": json.loads(Path(ns.trace).read_text())}
        except (OSError, ValueError) as exc:
            raise InputError(f"unreadable trace {ns.trace}: {exc}") from None
    return ns.command, cfg, args


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        command, cfg, args = _from_args(ns)
    except ConfigError as exc:
        print(f"coalsec: config error: {exc}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"coalsec: {exc}", file=sys.stderr)
        return 1
    try:
        execute(command, cfg, args, ns.out, getattr(ns, "workers", 1))
    except InputError as exc:
        print(f"coalsec: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"coalsec: config error: {exc}", file=sys.stderr)
        return 1
    except (CombinatorialLimitError, NonTerminationError, CoincidentNodesError, PartitionError,
            CoalitionSizeError, ArithmeticError) as exc:
        print(f"coalsec: engine error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"coalsec: cannot write outputs: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
