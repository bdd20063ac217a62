"""Command-line surface.

Every subcommand drives the same engine the HTTP API serves, so scripted
workflows (schema load -> concept import -> ingest -> query) never need a
running server. Domain failures exit 1 with `ERROR <code>: <detail>` on
stderr; usage mistakes exit 2 via argparse.
"""

from __future__ import annotations

import argparse
import os
import sys

from .engine import DEFAULT_K, DEFAULT_THRESHOLD, Engine
from .errors import BadRequest, EngineError
from .jsonutil import canonical
from .query import render_table

DEFAULT_DATA_DIR = "./idm-data"
DEFAULT_BIND = "127.0.0.1:8000"


def _engine(args) -> Engine:
    return Engine(args.data_dir)


def _emit(payload) -> int:
    sys.stdout.write(canonical(payload))
    return 0


# --- handlers ---------------------------------------------------------------

def _schema_load(args) -> int:
    return _emit(_engine(args).load_schema_file(args.file))


def _schema_list(args) -> int:
    rows = _engine(args).list_schema(args.category, args.name)
    if args.json:
        return _emit(rows)
    grid = [["id", "kind", "category", "constraint", "name"]]
    for row in rows:
        if row["kind"] == "cvt":
            constraint = row["dimension"] or row["classification"] or "-"
            grid.append([row["id"], "cvt", row["category"], constraint, row["name"]])
        else:
            grid.append([row["id"], "met", "-", ",".join(row["members"]), row["name"]])
    widths = [max(len(line[i]) for line in grid) for i in range(5)]
    for line in grid:
        print("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip())
    return 0


def _concept_import(args) -> int:
    return _emit(_engine(args).import_concepts(args.file))


def _concept_expand(args) -> int:
    return _emit(_engine(args).expand_concept(args.uri, args.predicate,
                                              args.direction))


def _ingest_form(args) -> int:
    return _emit(_engine(args).ingest_form(args.file))


def _ingest_suggest(args) -> int:
    engine = Engine(args.data_dir, similarity_threshold=args.threshold,
                    suggestion_k=args.k)
    return _emit({"label": args.label, "suggestions": engine.suggest(args.label)})


def _ingest_confirm(args) -> int:
    engine = _engine(args)
    return _emit(engine.confirm_mapping(args.form, args.field, args.cvt,
                                        args.concept))


def _ingest_migrate(args) -> int:
    return _emit(_engine(args).migrate_records(args.file, args.form))


def _query(args) -> int:
    engine = _engine(args)
    if args.explain:
        return _emit(engine.explain_query(args.text))
    result = engine.run_query(args.text)
    if args.json:
        return _emit(result)
    print(render_table(result["target"], result["rows"]))
    return 0


def _record_show(args) -> int:
    return _emit(_engine(args).get_patient_record(args.patient))


def _serve(args) -> int:
    import uvicorn

    from .api import create_app

    host, _, port = args.bind.rpartition(":")
    if not host or not port.isdigit():
        raise BadRequest(f"bind address '{args.bind}' is not host:port")
    app = create_app(_engine(args), ui_dir=args.ui_dir)
    uvicorn.run(app, host=host, port=int(port), log_level="warning")
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="idm", description="metadata-driven clinical data engine")
    parser.add_argument(
        "--data-dir", default=os.environ.get("IDM_DATA_DIR", DEFAULT_DATA_DIR),
        help="engine data directory (env IDM_DATA_DIR)")
    sub = parser.add_subparsers(dest="command", required=True)

    schema = sub.add_parser("schema", help="metadata definitions")
    schema_sub = schema.add_subparsers(dest="subcommand", required=True)
    load = schema_sub.add_parser("load", help="load a schema file")
    load.add_argument("file")
    load.set_defaults(handler=_schema_load)
    listing = schema_sub.add_parser("list", help="list CVTs and METs")
    listing.add_argument("--category", help="keep only CVTs of this category")
    listing.add_argument("--name", help="case-insensitive name substring")
    listing.add_argument("--json", action="store_true")
    listing.set_defaults(handler=_schema_list)

    concept = sub.add_parser("concept", help="semantics layer")
    concept_sub = concept.add_subparsers(dest="subcommand", required=True)
    imp = concept_sub.add_parser("import", help="import a terminology fragment")
    imp.add_argument("file")
    imp.set_defaults(handler=_concept_import)
    expand = concept_sub.add_parser("expand", help="transitive concept closure")
    expand.add_argument("uri")
    expand.add_argument("--predicate", required=True)
    expand.add_argument("--direction", choices=["forward", "inverse"],
                        default="forward")
    expand.set_defaults(handler=_concept_expand)

    ing = sub.add_parser("ingest", help="form ingestion pipeline")
    ing_sub = ing.add_subparsers(dest="subcommand", required=True)
    form = ing_sub.add_parser("form", help="derive metadata from a form file")
    form.add_argument("file")
    form.set_defaults(handler=_ingest_form)
    suggest = ing_sub.add_parser("suggest", help="rank concept candidates")
    suggest.add_argument("label")
    suggest.add_argument("--k", type=int, default=DEFAULT_K)
    suggest.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    suggest.set_defaults(handler=_ingest_suggest)
    confirm = ing_sub.add_parser("confirm", help="confirm a field mapping")
    confirm.add_argument("form")
    confirm.add_argument("field")
    confirm.add_argument("cvt")
    confirm.add_argument("--concept")
    confirm.set_defaults(handler=_ingest_confirm)
    migrate = ing_sub.add_parser("migrate", help="migrate CSV rows")
    migrate.add_argument("file")
    migrate.add_argument("form")
    migrate.set_defaults(handler=_ingest_migrate)

    query = sub.add_parser("query", help="run a query")
    query.add_argument("text")
    query.add_argument("--json", action="store_true")
    query.add_argument("--explain", action="store_true",
                       help="show the plan instead of executing")
    query.set_defaults(handler=_query)

    record = sub.add_parser("record", help="patient records")
    record_sub = record.add_subparsers(dest="subcommand", required=True)
    show = record_sub.add_parser("show", help="full containment tree")
    show.add_argument("patient")
    show.set_defaults(handler=_record_show)

    serve = sub.add_parser("serve", help="run the HTTP API")
    serve.add_argument("--bind", default=os.environ.get("IDM_BIND", DEFAULT_BIND),
                       help="host:port (env IDM_BIND)")
    serve.add_argument("--ui-dir", help="static workbench assets served at /ui/")
    serve.set_defaults(handler=_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except EngineError as exc:
        print(f"ERROR {exc.code}: {exc.detail}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
