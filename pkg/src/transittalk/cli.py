"""Command-line entry points.

Subcommands:
    serve            run the HTTP service
    ingest-gtfs      validate and summarize a GTFS directory
    ingest-policies  build/update the policy vector index
    tweet            draft a tweet for an alert from a file
    ask              answer one policy question
    chat             interactive terminal chat with the hub
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .alerts import parse_alert
from .config import AppConfig, load_config
from .gtfs import load_feed
from .hub import build_hub
from .policy import ingest_policies
from .tweets import FormatMode
from .vectorstore import VectorStore


def _add_config_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", default=None, help="config file path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transittalk", description=__doc__)
    parser.add_argument("--version", action="version", version=f"transittalk {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    _add_config_arg(serve)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)

    ingest_gtfs = sub.add_parser("ingest-gtfs", help="validate a GTFS directory")
    ingest_gtfs.add_argument("directory")

    ingest_pol = sub.add_parser("ingest-policies", help="build the policy index")
    ingest_pol.add_argument("directory")
    _add_config_arg(ingest_pol)

    tweet = sub.add_parser("tweet", help="draft a tweet for one alert")
    tweet.add_argument("--alert-file", required=True, help="file with one alert JSON object")
    tweet.add_argument("--format", choices=["preset", "open"], default="preset")
    _add_config_arg(tweet)

    ask = sub.add_parser("ask", help="answer one policy question")
    ask.add_argument("question")
    ask.add_argument("--sources", action="store_true", help="include raw policy segments")
    _add_config_arg(ask)

    chat = sub.add_parser("chat", help="interactive chat")
    _add_config_arg(chat)
    chat.add_argument("--staff", action="store_true", help="enable staff routing")

    return parser


def _config(args: argparse.Namespace) -> AppConfig:
    return load_config(getattr(args, "config", None))


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .server import create_app

    config = _config(args)
    hub = build_hub(config)
    app = create_app(hub, config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_ingest_gtfs(args: argparse.Namespace) -> int:
    feed = load_feed(args.directory)
    print(
        f"feed ok: {len(feed.stops)} stops, {len(feed.routes)} routes, "
        f"{len(feed.trips)} trips, {len(feed.stop_times)} stop-times"
    )
    return 0


def cmd_ingest_policies(args: argparse.Namespace) -> int:
    config = _config(args)
    store = VectorStore()
    report = ingest_policies(args.directory, store)
    if config.index_path:
        store.save(config.index_path)
        print(f"index written to {config.index_path}")
    print(
        f"ingested {report.documents} documents into {report.chunks} chunks "
        f"({report.skipped_unchanged} unchanged)"
    )
    for name, error in report.failures:
        print(f"failed: {name}: {error}", file=sys.stderr)
    return 0


def cmd_tweet(args: argparse.Namespace) -> int:
    config = _config(args)
    hub = build_hub(config)
    with open(args.alert_file, encoding="utf-8") as fh:
        alert = parse_alert(fh.read())
    if not any(a.alert_id == alert.alert_id for a in hub.alerts):
        hub.alerts.append(alert)
    draft = hub.compose_draft(alert.alert_id, FormatMode(args.format))
    print(f"draft {draft.draft_id} ({draft.review_status.value}):")
    print(draft.text or f"(agent failed: {draft.failure_reason})")
    if draft.violations:
        print("violations:")
        for violation in draft.violations:
            print(f"  - {violation.rule.value}: {violation.detail}")
    return 0


def cmd_ask(args: argparse.Namespace) -> int:
    config = _config(args)
    hub = build_hub(config)
    from .policy import answer_policy_query

    answer = answer_policy_query(
        args.question,
        store=hub.vector_store,
        gateway=hub.gateway,
        k=config.retrieval_k,
        include_sources=args.sources,
        threshold=config.low_confidence_threshold,
    )
    print(answer.answer_text)
    if answer.confidence_note:
        print(f"\n{answer.confidence_note}")
    print("\ncitations:")
    for citation in answer.citations:
        print(f"  - {citation.doc_id} [{citation.chunk_id}] score={citation.score:.3f}")
    if answer.raw_segments:
        print("\nsources:")
        for segment in answer.raw_segments:
            print(json.dumps(segment))
    return 0


def cmd_chat(args: argparse.Namespace) -> int:
    config = _config(args)
    hub = build_hub(config)
    session_id = None
    print("transittalk chat; empty line or Ctrl-D to quit")
    while True:
        try:
            line = input("you> ").strip()
        except EOFError:
            break
        if not line:
            break
        reply = hub.handle_message(session_id, line, staff=args.staff)
        session_id = reply.session_id
        print(f"[{reply.app.value}] {reply.reply}")
        if reply.facts:
            print(f"--- facts ---\n{reply.facts}\n-------------")
    return 0


_COMMANDS = {
    "serve": cmd_serve,
    "ingest-gtfs": cmd_ingest_gtfs,
    "ingest-policies": cmd_ingest_policies,
    "tweet": cmd_tweet,
    "ask": cmd_ask,
    "chat": cmd_chat,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
