"""Command-line driver.

Exit codes: 0 ok, 2 usage, 3 compile error, 4 runtime error, 5 protocol error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import CompileError, PickleError, ProtocolError, ReflexecError
from .harness import MigrationReport, Session, checkpoint, describe, program_source, restore
from .pickling import ErrorPolicy, drop_bindings

EXIT_OK, EXIT_USAGE, EXIT_COMPILE, EXIT_RUNTIME, EXIT_PROTOCOL = 0, 2, 3, 4, 5


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--policy", choices=("fail", "nil"), default="fail",
                   help="what to do with values that cannot be captured")
    p.add_argument("--fuel", type=int, default=None, help="step budget per resume")
    p.add_argument("--report", choices=("json", "text"), default=None,
                   help="print a migration report on stderr")
    p.add_argument("--root", default=".", help="directory that program file paths are relative to")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="reflexec",
                                     description="Run, checkpoint and migrate coroutine programs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run a program to completion")
    p.add_argument("program")
    p.add_argument("args", nargs="*")

    p = sub.add_parser("checkpoint", parents=[common], help="dump a program at a yield")
    p.add_argument("program")
    p.add_argument("args", nargs="*")
    p.add_argument("--at-yield", type=int, default=1, dest="at_yield")
    p.add_argument("--out", required=True)
    p.add_argument("--drop", action="append", default=[], metavar="VAR",
                   help="store VAR as nil in the dump (repeatable)")

    p = sub.add_parser("restore", parents=[common], help="resume a dump to completion")
    p.add_argument("dump")

    p = sub.add_parser("serve", parents=[common], help="accept migrations")
    p.add_argument("--listen", default="127.0.0.1:7707")

    p = sub.add_parser("migrate", parents=[common], help="move a running program to a server")
    p.add_argument("program")
    p.add_argument("args", nargs="*")
    p.add_argument("--to", required=True, metavar="HOST:PORT")
    p.add_argument("--at-yield", type=int, default=1, dest="at_yield")

    p = sub.add_parser("bench", help="payload and timing scaling report (CSV + PNG)")
    p.add_argument("--out", default="bench-out")
    p.add_argument("--depths", default="5:50:5", help="START:STOP:STEP (inclusive)")
    p.add_argument("--fib", default="5,10,15,20", help="comma-separated Fibonacci arguments")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--no-figures", action="store_true")
    return parser


def _emit_report(args, report: MigrationReport) -> None:
    if not args.report:
        return
    data = report.as_dict()
    if args.report == "json":
        print(json.dumps(data, sort_keys=True), file=sys.stderr)
    else:
        for k, v in data.items():
            print(f"{k}: {v:.3f}" if isinstance(v, float) else f"{k}: {v}", file=sys.stderr)


def _print_lines(lines) -> None:
    for line in lines:
        print(line)


def _depths(text: str) -> list[int]:
    try:
        start, stop, step = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --depths {text!r}") from None
    return list(range(start, stop + 1, step))


def cmd_run(args) -> int:
    session = Session.boot(program_source(args.program), args.args,
                           file_root=args.root, fuel=args.fuel)
    value = session.finish()
    _print_lines(session.output)
    print(f"=> {describe(session, value)}")
    return EXIT_OK


def cmd_checkpoint(args) -> int:
    session = Session.boot(program_source(args.program), args.args,
                           file_root=args.root, fuel=args.fuel)
    edit = (lambda doc: drop_bindings(doc, args.drop)) if args.drop else None
    cp = checkpoint(session, args.at_yield, ErrorPolicy.named(args.policy), edit)
    Path(args.out).write_bytes(cp.data)
    _print_lines(cp.output)
    _emit_report(args, cp.report)
    return EXIT_OK


def cmd_restore(args) -> int:
    report = MigrationReport()
    session = restore(Path(args.dump).read_bytes(), file_root=args.root, fuel=args.fuel,
                      report=report)
    value = session.finish()
    _print_lines(session.output)
    print(f"=> {describe(session, value)}")
    _emit_report(args, report)
    return EXIT_OK


def cmd_serve(args) -> int:
    from .net import NodeConfig, serve

    config = NodeConfig(args.listen, args.root, args.fuel, args.policy)
    try:
        config.validate()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    def ready(addr):
        print(f"listening on {addr[0]}:{addr[1]}", file=sys.stderr, flush=True)

    def log(peer, reply):
        state = "ok" if reply.get("ok") else f"error ({reply.get('error')})"
        print(f"{peer[0]}:{peer[1]} {state}", file=sys.stderr, flush=True)

    try:
        serve(config, ready=ready, log=log)
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_migrate(args) -> int:
    from .net import migrate

    session = Session.boot(program_source(args.program), args.args,
                           file_root=args.root, fuel=args.fuel)
    result = migrate(session, args.to, args.at_yield, ErrorPolicy.named(args.policy))
    _print_lines(result.local_output)
    reply = result.reply
    if not reply.get("ok"):
        print(f"error: remote: {reply.get('error')}", file=sys.stderr)
        return EXIT_PROTOCOL if reply.get("kind") == "protocol" else EXIT_RUNTIME
    _print_lines(reply["output"])
    print(f"=> {reply['value']}")
    _emit_report(args, result.report)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .report import DEDUP_FIELDS, SCALING_FIELDS, to_csv, write_bench

    fib = [int(x) for x in args.fib.split(",") if x]
    result = write_bench(args.out, _depths(args.depths), fib, args.repeats,
                         figures=not args.no_figures)
    sys.stdout.write(to_csv(result["scaling"], SCALING_FIELDS))
    print()
    sys.stdout.write(to_csv(result["dedup"], DEDUP_FIELDS))
    lin = result["linearity"]
    print(f"# payload increasing={lin['increasing']} median_step={lin['median']} "
          f"max_rel_dev={lin['max_rel_dev']:.3f}", file=sys.stderr)
    for key, path in result["paths"].items():
        print(f"# wrote {key}: {path}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run, "checkpoint": cmd_checkpoint, "restore": cmd_restore,
    "serve": cmd_serve, "migrate": cmd_migrate, "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CompileError as exc:
        print(f"compile error: {exc}", file=sys.stderr)
        return EXIT_COMPILE
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (PickleError, ReflexecError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except argparse.ArgumentTypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
