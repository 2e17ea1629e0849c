"""Command-line entry points.

Subcommands:
  serve        run the JSON API over a data directory
  ingest       validate and activate a content pack
  rollback     re-activate an earlier pack version
  export-logs  concatenate every conversation log into one JSONL file
  analyze      aggregate logs into ratings / entries / acceptance reports
  simulate     drive a scripted persona conversation against a fresh engine

The data directory comes from ``--data-dir`` or the ``CONVOKERNEL_DATA_DIR``
environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import tempfile
from pathlib import Path

from . import topics
from .analytics import (
    PersonaScript,
    acceptance_report,
    entries_report,
    format_report,
    ratings_report,
    run_persona,
)
from .content import (
    ConversationLog,
    PackKind,
    PackManager,
    group_log_records,
    parse_log_lines,
)
from .engine import Engine
from .errors import ConvoKernelError

ENV_DATA_DIR = "CONVOKERNEL_DATA_DIR"

REPORT_BUILDERS = {
    "ratings": ratings_report,
    "entries": entries_report,
    "acceptance": acceptance_report,
}


class CliError(Exception):
    """A user-facing command failure (bad arguments, bad files)."""


def _resolve_data_dir(value: str | None) -> Path:
    if value:
        return Path(value)
    env = os.environ.get(ENV_DATA_DIR)
    if env:
        return Path(env)
    raise CliError(f"a data directory is required: pass --data-dir or set {ENV_DATA_DIR}")


def load_logs(path: str | Path) -> list[ConversationLog]:
    """Read conversation logs from a file, a log directory, or a data directory.

    Accepts a single JSONL file (per-conversation or a combined export),
    a directory of ``*.jsonl`` files, or an engine data directory with a
    ``logs/`` subdirectory.
    """
    root = Path(path)
    if root.is_dir():
        if (root / "logs").is_dir():
            root = root / "logs"
        files = sorted(root.glob("*.jsonl"))
    elif root.is_file():
        files = [root]
    else:
        raise CliError(f"no such log file or directory: {root}")
    records: list[dict] = []
    for file in files:
        records.extend(parse_log_lines(file.read_text(encoding="utf-8").splitlines()))
    return group_log_records(records)


# ---------------------------------------------------------------------------
# Subcommand implementations.


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .api import create_app

    data_dir = _resolve_data_dir(args.data_dir)
    engine = Engine(data_dir, seed=args.seed)
    app = create_app(engine)
    if hasattr(signal, "SIGHUP"):
        # Hot-reload the active flow/template/catalog packs without a restart.
        signal.signal(signal.SIGHUP, lambda *_: engine.reload_flows())
    print(f"serving data dir {data_dir} on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    data_dir = _resolve_data_dir(args.data_dir)
    packs = PackManager(data_dir)
    if args.kind == PackKind.FLOWS.value:
        # Flow documents are validated against the real handler registry.
        _, handlers = topics.build_registry(packs=packs)
        packs.flow_registry = handlers
    version = packs.ingest_pack(args.file, args.kind)
    print(f"ingested {args.kind} pack as version {version}")
    return 0


def cmd_rollback(args: argparse.Namespace) -> int:
    data_dir = _resolve_data_dir(args.data_dir)
    PackManager(data_dir).rollback(args.kind, args.version)
    print(f"active {args.kind} pack set to version {args.version}")
    return 0


def cmd_export_logs(args: argparse.Namespace) -> int:
    data_dir = _resolve_data_dir(args.data_dir)
    log_dir = data_dir / "logs"
    files = sorted(log_dir.glob("*.jsonl")) if log_dir.is_dir() else []
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(out, "w", encoding="utf-8") as fh:
        for file in files:
            for record in parse_log_lines(
                file.read_text(encoding="utf-8").splitlines()
            ):
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
                count += 1
    print(f"exported {count} records from {len(files)} conversations to {out}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    logs = load_logs(args.logs)
    rows = REPORT_BUILDERS[args.report](logs)
    print(format_report(rows, args.format))
    if not logs:
        print("warning: no log records found", file=sys.stderr)
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    script = PersonaScript.load(args.script)

    def run(data_dir: Path):
        engine = Engine(data_dir, seed=args.seed)
        return run_persona(script, engine)

    if args.data_dir or os.environ.get(ENV_DATA_DIR):
        result = run(_resolve_data_dir(args.data_dir))
    else:
        # No data directory means an ephemeral run: fully reproducible
        # from (script, seed) alone, nothing left on disk.
        with tempfile.TemporaryDirectory(prefix="convokernel-sim-") as tmp:
            result = run(Path(tmp))

    print(result.transcript_text)
    if args.out:
        document = {
            "script": result.script_name,
            "seed": args.seed,
            "conversation_id": result.conversation_id,
            "transcript": list(result.transcript),
            "modules": [turn.module_id for turn in result.log.turns],
            "rating": result.log.rating,
        }
        out = Path(args.out)
        if out.parent and not out.parent.exists():
            out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(
            json.dumps(document, indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        print(f"wrote {out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing.


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convokernel",
        description="Open-domain dialog engine: serve, manage content, analyze logs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_dir(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--data-dir",
            default=None,
            help=f"engine data directory (default: ${ENV_DATA_DIR})",
        )

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--seed", type=int, default=0, help="randomness seed")
    add_data_dir(p)
    p.set_defaults(func=cmd_serve)

    kinds = [kind.value for kind in PackKind]
    p = sub.add_parser("ingest", help="validate and activate a content pack")
    p.add_argument("--kind", required=True, choices=kinds)
    p.add_argument("--file", required=True)
    add_data_dir(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("rollback", help="re-activate an earlier pack version")
    p.add_argument("--kind", required=True, choices=kinds)
    p.add_argument("--version", required=True, type=int)
    add_data_dir(p)
    p.set_defaults(func=cmd_rollback)

    p = sub.add_parser("export-logs", help="write all logs as one JSONL file")
    p.add_argument("--out", required=True)
    add_data_dir(p)
    p.set_defaults(func=cmd_export_logs)

    p = sub.add_parser("analyze", help="aggregate conversation logs")
    p.add_argument("--logs", required=True, help="log file, log dir, or data dir")
    p.add_argument("--report", required=True, choices=sorted(REPORT_BUILDERS))
    p.add_argument("--format", default="table", choices=["table", "json", "csv"])
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="run a scripted persona conversation")
    p.add_argument("--script", required=True, help="persona script (JSON)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the run document here (JSON)")
    add_data_dir(p)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConvoKernelError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
