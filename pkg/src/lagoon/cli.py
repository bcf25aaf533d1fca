"""Command-line interface: ``lagoon server|client|bench|oracle|count``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .bench import CANONICAL, TestSetup, canonical_instance, generate_setup, oracle_check, run_grid
from .bench.grid import HEURISTICS
from .errors import LagoonError
from .model import Instance, count_permutations, stirling_factorial
from .runtime import ClientProcess, LocalRuntime, TaskContractor, file_channel, stdout_channel
from .transport import DEFAULT_HEARTBEAT, TransportError, default_port

EXIT_PRECONDITION = 2


def _host_port(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port()
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}") from None


def _counts(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def load_setup(path: str | Path, seed: int = 0) -> tuple[str, Instance]:
    """A setup file holds either a full instance or a TestSetup (optionally with ``instance_seed``)."""
    path = Path(path)
    data = json.loads(path.read_text())
    if "jobs" in data:
        return path.stem, Instance.from_dict(data, name=path.stem)
    inst_seed = int(data.pop("instance_seed", seed))
    spec = TestSetup.from_dict(data)
    return spec.name or path.stem, generate_setup(spec, inst_seed)


# -- subcommands ------------------------------------------------------------------


def cmd_count(args) -> int:
    exact = count_permutations(args.jobs, args.counts)
    print(f"distinct sequences: {exact}")
    print(f"Stirling estimate of {args.jobs}!: {stirling_factorial(args.jobs):.6g}")
    return 0


def cmd_server(args) -> int:
    rt = LocalRuntime(workers=args.workers, heartbeat=args.heartbeat)
    port = rt.listen(args.host, args.port)
    print(f"server listening on {args.host}:{port}", flush=True)
    try:
        if args.tasks:
            channel = file_channel(args.output) if args.output else stdout_channel()
            contractor = TaskContractor(rt.node, "server/contractor", args.tasks, channel).start()
            contractor.done.wait()
            if contractor.error is not None:
                print(f"error: {contractor.error}", file=sys.stderr)
                return EXIT_PRECONDITION
            print(f"submitted {len(contractor.submitted)} tasks", flush=True)
            if args.once:
                answer = rt.agents.answer
                while not set(contractor.submitted) <= answer.delivered:
                    time.sleep(0.1)
                return 0
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        return 0
    finally:
        rt.shutdown()


def cmd_client(args) -> int:
    host, port = args.connect
    name = args.name or f"client-{int(time.time() * 1000) % 100000}"
    proc = ClientProcess(host, port, name, args.workers, args.heartbeat)
    print(f"{name} connected to {host}:{port} with {args.workers} workers", flush=True)
    try:
        proc.node.disconnected.wait()
        print("server connection lost", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 0
    finally:
        proc.close()


def cmd_bench(args) -> int:
    if args.canonical:
        setups = {args.canonical: canonical_instance(args.canonical)}
    else:
        name, inst = load_setup(args.setup, args.seed)
        setups = {name: inst}
    algos = list(HEURISTICS) if args.algo == "all" else [args.algo]
    if args.connect:
        host, port = args.connect
        runtime = ClientProcess(host, port, f"bench-{int(time.time() * 1000) % 100000}", 0, args.heartbeat)
    else:
        runtime = LocalRuntime(workers=args.workers, heartbeat=args.heartbeat)
    try:
        result = run_grid(setups, algos, args.seed, args.reps, args.budget, runtime=runtime)
    finally:
        if args.connect:
            runtime.close()
        else:
            runtime.shutdown()
    if args.out:
        result.write_csv(args.out)
    print(result.table())
    return 0


def cmd_oracle(args) -> int:
    _, inst = load_setup(args.setup, args.seed)
    algos = list(HEURISTICS) if args.algo == "all" else [args.algo]
    report = oracle_check(inst, algos, args.seeds, args.budget, args.seed)
    print(json.dumps(report.to_dict(), indent=2) if args.json else report.text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lagoon", description="Simulation-based cluster-tool scheduling on a multi-agent runtime.")
    p.add_argument("-v", "--verbose", action="store_true", help="log runtime activity")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("server", help="run the server node")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=None, help="default 7421 or $LAGOON_PORT")
    s.add_argument("--workers", type=int, default=0, help="local worker capacity (default 0)")
    s.add_argument("--tasks", help="JSON task list to contract on startup")
    s.add_argument("--output", help="append result lines to this file instead of stdout")
    s.add_argument("--once", action="store_true", help="exit once every contracted task is answered")
    s.add_argument("--heartbeat", type=float, default=DEFAULT_HEARTBEAT)
    s.set_defaults(fn=cmd_server)

    c = sub.add_parser("client", help="join a server as a worker node")
    c.add_argument("--connect", type=_host_port, required=True, metavar="HOST:PORT")
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--name")
    c.add_argument("--heartbeat", type=float, default=DEFAULT_HEARTBEAT)
    c.set_defaults(fn=cmd_client)

    b = sub.add_parser("bench", help="run an experiment grid")
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--setup", help="setup JSON (TestSetup fields or a full instance)")
    src.add_argument("--canonical", choices=sorted(CANONICAL))
    b.add_argument("--algo", choices=[*HEURISTICS, "all"], default="all")
    b.add_argument("--budget", type=int, default=10000)
    b.add_argument("--reps", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="long-format CSV output")
    b.add_argument("--connect", type=_host_port, metavar="HOST:PORT", help="submit to a running server")
    b.add_argument("--workers", type=int, default=1, help="local workers when not connecting")
    b.add_argument("--heartbeat", type=float, default=DEFAULT_HEARTBEAT)
    b.set_defaults(fn=cmd_bench)

    o = sub.add_parser("oracle", help="compare heuristics against the brute-force optimum")
    o.add_argument("--setup", required=True)
    o.add_argument("--algo", choices=[*HEURISTICS, "all"], default="all")
    o.add_argument("--seeds", type=int, default=100)
    o.add_argument("--budget", type=int, default=10000)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--json", action="store_true")
    o.set_defaults(fn=cmd_oracle)

    n = sub.add_parser("count", help="count distinct job sequences")
    n.add_argument("--jobs", type=int, required=True)
    n.add_argument("--counts", type=_counts, required=True, metavar="a,b,...")
    n.set_defaults(fn=cmd_count)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except (LagoonError, TransportError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
