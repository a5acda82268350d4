"""``propsim`` command line: run, partition, run-distributed, info.

Every command prints (or writes) one JSON document. Failures print a JSON
error object on stderr and exit with 1 (runtime), 2 (config or input) or 3
(``--verify-against-single`` mismatch).
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .distributed import TrafficLog, partition_in_degrees, run_on_partitions
from .engine import EpochResults, Simulation
from .errors import InputError, IntegrityError, PropsimError, StorageError, ValidationError
from .graph import check_seeds, in_degree, load_graph, top_degree_seeds
from .models import ModelSpec
from .partition import GraphPartitioner, assemble_graph, load_partitions, read_manifest

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT, EXIT_VERIFY = 0, 1, 2, 3


class VerificationFailed(PropsimError):
    pass


@dataclass
class RunConfig:
    graph: str | None = None
    directed: bool = False
    weighted: bool = False
    model: str | None = None
    params: dict = field(default_factory=dict)
    seeds: str = "top-degree:0.1"
    epochs: int = 100
    steps: int | str = 100
    batch: int = 100
    seed: int = 0
    threads: int = 1
    memory_cap: int | None = None
    max_steps: int | None = None
    output: str | None = None
    # run-distributed only
    root: str | None = None
    workers: int | None = None
    transport: str = "inproc"

    @property
    def times(self) -> int | None:
        return None if self.steps == "converge" else self.steps

    def resolved(self, keys) -> dict:
        # where the output goes does not affect the results, so it is not recorded
        return {k: v for k, v in asdict(self).items() if k in keys and k != "output"}


RUN_KEYS = ("graph", "directed", "weighted", "model", "params", "seeds", "epochs", "steps", "batch", "seed",
            "threads", "memory_cap", "max_steps", "output")
DIST_KEYS = tuple(k for k in RUN_KEYS if k not in ("graph", "directed", "weighted")) + ("root", "workers",
                                                                                         "transport")


# -- value parsing -------------------------------------------------------------


def parse_params(text) -> dict:
    """``"beta=0.01,lambda=0.005"`` (or an already-parsed mapping) to a dict."""
    if isinstance(text, dict):
        return dict(text)
    if not isinstance(text, str):
        raise ValidationError(f"params must be a k=v list or an object, got {text!r}")
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ValidationError(f"bad parameter {item!r}; expected name=value")
        try:
            out[key.strip()] = int(value) if re.fullmatch(r"[+-]?\d+", value.strip()) else float(value)
        except ValueError:
            raise ValidationError(f"parameter {key.strip()} is not a number: {value!r}") from None
    return out


def parse_steps(value) -> int | str:
    if value == "converge":
        return value
    try:
        steps = int(value)
    except (TypeError, ValueError):
        raise ValidationError(f"steps must be an integer or 'converge', got {value!r}") from None
    if steps < 0:
        raise ValidationError(f"steps must be >= 0, got {steps}")
    return steps


_SIZE_UNITS = {"": 1, "K": 1 << 10, "M": 1 << 20, "G": 1 << 30, "T": 1 << 40}


def parse_size(value) -> int | None:
    if value is None:
        return None
    m = re.fullmatch(r"\s*(\d+)\s*([KMGT]?)i?B?\s*", str(value), re.IGNORECASE)
    if not m:
        raise ValidationError(f"memory cap must look like 4096, 512M or 4G, got {value!r}")
    return int(m.group(1)) * _SIZE_UNITS[m.group(2).upper()]


def _int(name, value, minimum):
    if isinstance(value, bool) or not isinstance(value, int):
        try:
            value = int(str(value))
        except ValueError:
            raise ValidationError(f"{name} must be an integer, got {value!r}") from None
    if value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {value}")
    return value


def _bool(name, value):
    if not isinstance(value, bool):
        raise ValidationError(f"{name} must be true or false, got {value!r}")
    return value


def build_config(args: argparse.Namespace, keys) -> RunConfig:
    """Merge ``--config`` JSON and explicit flags (flags win), then validate everything."""
    merged: dict = {}
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {args.config}") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ValidationError(f"config {args.config} must hold a JSON object")
        unknown = sorted(set(loaded) - set(keys))
        if unknown:
            raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")
        merged.update(loaded)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v

    cfg = RunConfig()
    for k, v in merged.items():
        setattr(cfg, k, v)
    if cfg.model is None:
        raise ValidationError("a model is required (--model)")
    if "graph" in keys and cfg.graph is None:
        raise ValidationError("a graph is required (--graph)")
    if "root" in keys and cfg.root is None:
        raise ValidationError("a partition directory is required (--root)")
    cfg.directed = _bool("directed", cfg.directed)
    cfg.weighted = _bool("weighted", cfg.weighted)
    cfg.params = parse_params(cfg.params)
    cfg.steps = parse_steps(cfg.steps)
    cfg.epochs = _int("epochs", cfg.epochs, 1)
    cfg.batch = _int("batch", cfg.batch, 1)
    cfg.seed = _int("seed", cfg.seed, 0)
    if cfg.seed >= 1 << 64:
        raise ValidationError("seed must fit in 64 bits")
    cfg.threads = _int("threads", cfg.threads, 1)
    cfg.memory_cap = parse_size(cfg.memory_cap)
    if cfg.max_steps is not None:
        cfg.max_steps = _int("max_steps", cfg.max_steps, 1)
    if cfg.workers is not None:
        cfg.workers = _int("workers", cfg.workers, 1)
    if "workers" in keys and cfg.workers is None:
        raise ValidationError("--workers is required")
    if cfg.transport not in ("inproc", "socket"):
        raise ValidationError(f"transport must be 'inproc' or 'socket', got {cfg.transport!r}")
    if not isinstance(cfg.seeds, str):
        raise ValidationError("seeds must be 'top-degree:<fraction>' or a path to an id list")
    return cfg


def resolve_seeds(spec: str, degrees: np.ndarray) -> list[int]:
    n = degrees.size
    if spec.startswith("top-degree:"):
        try:
            fraction = float(spec.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"bad seed fraction in {spec!r}") from None
        if not 0.0 <= fraction <= 1.0:
            raise ValidationError(f"seed fraction must be in [0, 1], got {fraction}")
        return top_degree_seeds(degrees, fraction)
    if spec in ("none", ""):
        return []
    path = Path(spec)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ValidationError(f"seed file not found: {path}") from None
    except OSError as exc:
        raise ValidationError(f"cannot read seed file {path}: {exc}") from None
    ids = []
    for lineno, line in enumerate(text.splitlines(), 1):
        for tok in line.split("#", 1)[0].split():
            try:
                ids.append(int(tok))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: seed id is not an integer: {tok!r}") from None
    return check_seeds(ids, n)


# -- output ------------------------------------------------------------------------


def results_document(res: EpochResults, cfg: dict, seeds: list[int], command: str, elapsed: float) -> dict:
    doc = res.to_dict()
    doc["config"] = cfg
    doc["num_nodes"] = int(res.final_states.shape[2])
    doc["num_seeds"] = len(seeds)
    if res.model == "SEIR_DT":
        doc["spread_variants"] = {"E+I+R": res.spread_of("E", "I", "R"), "I+R": res.spread_of("I", "R")}
    doc["run_info"] = {
        "command": command,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "elapsed_seconds": round(elapsed, 6),
    }
    return doc


def emit(doc: dict, output: str | None) -> None:
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if output is None:
        sys.stdout.write(text)
        return
    try:
        Path(output).write_text(text)
    except OSError as exc:
        raise StorageError(f"cannot write {output}: {exc}") from exc


def comparable(doc: dict) -> dict:
    """A results document without the fields that legitimately differ between runs."""
    return {k: v for k, v in doc.items() if k != "run_info"}


# -- commands ---------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = build_config(args, RUN_KEYS)
    model = ModelSpec(cfg.model, cfg.params)
    g = load_graph(cfg.graph, directed=cfg.directed, weighted=cfg.weighted)
    model.check_graph(g.num_nodes, g.weighted)
    seeds = resolve_seeds(cfg.seeds, in_degree(g))
    t0 = time.perf_counter()
    sim = Simulation(model, g, seeds, cfg.seed, threads=cfg.threads, memory_cap=cfg.memory_cap)
    res = sim.run_epochs(cfg.epochs, cfg.times, cfg.batch, max_steps=cfg.max_steps)
    emit(results_document(res, cfg.resolved(RUN_KEYS), seeds, "run", time.perf_counter() - t0), cfg.output)
    return EXIT_OK


def cmd_run_distributed(args) -> int:
    cfg = build_config(args, DIST_KEYS)
    model = ModelSpec(cfg.model, cfg.params)
    manifest = read_manifest(cfg.root)
    if cfg.workers != manifest["num_parts"]:
        raise ValidationError(f"--workers {cfg.workers} does not match the {manifest['num_parts']} partitions "
                              f"under {cfg.root}")
    parts = load_partitions(cfg.root)
    seeds = resolve_seeds(cfg.seeds, partition_in_degrees(parts))
    traffic = TrafficLog()
    t0 = time.perf_counter()
    res = run_on_partitions(parts, model, seeds, cfg.epochs, cfg.times, cfg.batch, cfg.seed,
                            transport=cfg.transport, threads_per_worker=cfg.threads, traffic=traffic,
                            max_steps=cfg.max_steps, memory_cap=cfg.memory_cap)
    doc = results_document(res, cfg.resolved(DIST_KEYS), seeds, "run-distributed", time.perf_counter() - t0)
    doc["run_info"]["sync_values_per_step"] = traffic.values_per_step[:1]
    if args.verify_against_single:
        g = assemble_graph(parts)
        ref = Simulation(model, g, seeds, cfg.seed, threads=cfg.threads, memory_cap=cfg.memory_cap)
        single = ref.run_epochs(cfg.epochs, cfg.times, cfg.batch, max_steps=cfg.max_steps)
        same = single.to_json() == res.to_json() and np.array_equal(single.final_states, res.final_states)
        doc["run_info"]["verified_against_single"] = same
        emit(doc, cfg.output)
        if not same:
            raise VerificationFailed("distributed results differ from the single-process run")
        return EXIT_OK
    emit(doc, cfg.output)
    return EXIT_OK


def cmd_partition(args) -> int:
    g = load_graph(args.graph, directed=args.directed, weighted=args.weighted)
    parter = GraphPartitioner(g, args.parts, args.root)
    parter.generate_partition()
    report = parter.balance_report()
    report["root"] = str(args.root)
    emit(report, None)
    return EXIT_OK if report["bound_holds"] else EXIT_RUNTIME


def cmd_info(args) -> int:
    g = load_graph(args.graph, directed=args.directed, weighted=args.weighted)
    if g.num_edges == 0:
        raise ValidationError(f"{args.graph}: graph has no edges")
    deg = in_degree(g)
    emit({
        "graph": str(args.graph),
        "num_nodes": g.num_nodes,
        "num_edges": g.num_edges,
        "input_edges": g.num_edges if g.directed else g.num_edges // 2,
        # each stored edge adds one to the degree of both endpoints
        "average_degree": 2 * g.num_edges / g.num_nodes,
        "max_in_degree": int(deg.max()),
        "isolated_nodes": int((deg == 0).sum()),
        "directed": g.directed,
        "weighted": g.weighted,
    }, None)
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _graph_flags(p):
    p.add_argument("--graph", help="edge list (text) or binary CSR file")
    p.add_argument("--directed", action="store_true", default=None, help="treat edges as directed")
    p.add_argument("--weighted", action="store_true", default=None, help="read a third weight column")


def _run_flags(p):
    p.add_argument("--model", help="SI, SIS, SIR, SEIR_DT, IC, THRESHOLD, VOTER, MAJORITY_RULE or HK")
    p.add_argument("--params", help="comma-separated name=value pairs, e.g. beta=0.01,lambda=0.005")
    p.add_argument("--seeds", help="top-degree:<fraction> or a file of node ids")
    p.add_argument("--epochs", type=int, help="number of Monte Carlo simulations")
    p.add_argument("--steps", help="steps per simulation, or 'converge' (IC and THRESHOLD only)")
    p.add_argument("--batch", type=int, help="simulations advanced together")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker threads")
    p.add_argument("--memory-cap", dest="memory_cap", help="byte cap for state buffers, e.g. 2G")
    p.add_argument("--max-steps", dest="max_steps", type=int, help="step cap for --steps converge")
    p.add_argument("--output", help="write JSON here instead of stdout")
    p.add_argument("--config", help="JSON file with the same keys as the flags")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="propsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"propsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="Monte Carlo simulation on one graph")
    _graph_flags(p)
    _run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("partition", help="split a graph into target-node shards")
    _graph_flags(p)
    p.add_argument("--parts", type=int, required=True)
    p.add_argument("--root", required=True, help="output directory")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("run-distributed", help="simulate over stored shards, one worker each")
    p.add_argument("--root", help="directory written by 'partition'")
    p.add_argument("--workers", type=int)
    p.add_argument("--transport", choices=("inproc", "socket"))
    _run_flags(p)
    p.add_argument("--verify-against-single", action="store_true",
                   help="rerun single-process and fail with exit 3 on any difference")
    p.set_defaults(func=cmd_run_distributed)

    p = sub.add_parser("info", help="graph summary")
    _graph_flags(p)
    p.set_defaults(func=cmd_info)
    return parser


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, VerificationFailed):
        return EXIT_VERIFY
    if isinstance(exc, (InputError, StorageError, IntegrityError)):
        return EXIT_INPUT
    return EXIT_RUNTIME


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command in ("partition", "info"):
            if args.graph is None:
                raise ValidationError("a graph is required (--graph)")
            args.directed = bool(args.directed)
            args.weighted = bool(args.weighted)
        return args.func(args)
    except Exception as exc:
        code = exit_code_for(exc)
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
