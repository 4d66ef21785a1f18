"""Command-line pipeline: ingest, queries, solvers, agents, scoring, reports, figures."""

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

from .agent_harness import TaskResult, run_task, save_episode, save_task_failure, task_spec, tool_use_report
from .chat_client import make_client
from .config import config
from .dataset import (
    InfeasibleQueryError,
    filter_pool,
    ingest_base,
    load_attribute_file,
    load_jsonl,
    load_pool,
    save_pool,
)
from .errors import EmptyBatchError, InvalidInputError, ItinBenchError
from .metrics import EvaluationBatch, MetricReport, build_report, write_table_csv
from .plan_model import Itinerary, load_plan, load_plans, plan_filename, save_plan
from .querygen import PreferenceQuery, load_queries, sample_queries, save_queries
from .settings import RunConfig, load_run_config, save_run_config
from .solvers import solve_plan
from .viz import plan_geojson, save_geojson

logger = logging.getLogger(__name__)


def _path(value: Optional[str]) -> Optional[Path]:
    return Path(value) if value else None


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides = dict(
        seed=args.seed,
        workers=args.workers,
        output_dir=_path(args.output_dir),
        pool_path=_path(getattr(args, "pool", None)),
        queries_path=_path(getattr(args, "queries", None)),
        businesses_path=_path(getattr(args, "businesses", None)),
        attributes_path=_path(getattr(args, "attributes", None)),
        seeds=getattr(args, "seeds", None),
        task=getattr(args, "task", None),
        solver=getattr(args, "solver", None),
    )
    run_config = load_run_config(_path(args.config), **overrides)
    client_updates = {}
    if getattr(args, "mock_transcript", None):
        client_updates["mock_transcript"] = Path(args.mock_transcript)
    if getattr(args, "extraction_mode", None):
        client_updates["extraction_mode"] = args.extraction_mode
    if client_updates:
        run_config.client = run_config.client.model_copy(update=client_updates)
    return run_config


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))


def _load_inputs(run_config: RunConfig):
    run_config.require("pool_path", "queries_path")
    return load_pool(run_config.pool_path), load_queries(run_config.queries_path)


# --- Subcommands -----------------------------------------------------------------


def cmd_ingest(run_config: RunConfig, args: argparse.Namespace) -> int:
    run_config.require("businesses_path")
    records = load_jsonl(run_config.businesses_path)
    attributes = load_attribute_file(run_config.attributes_path) if run_config.attributes_path else {}
    pool = ingest_base(records, run_config.ingest, attributes)
    output = _path(args.output) or run_config.output_dir / "pool.json"
    save_pool(pool, output, run_config.config_hash())
    print(json.dumps({"pool": str(output), "counts": pool.counts()}))
    return 0


def cmd_gen_queries(run_config: RunConfig, args: argparse.Namespace) -> int:
    queries = sample_queries(run_config.seed_list())
    output = _path(args.output) or run_config.output_dir / "queries.json"
    save_queries(queries, output, run_config.config_hash())
    print(json.dumps({"queries": str(output), "count": len(queries)}))
    return 0


def cmd_solve(run_config: RunConfig, args: argparse.Namespace) -> int:
    pool, queries = _load_inputs(run_config)
    metric_config = run_config.metrics
    output_dir = run_config.output_dir / "plans" / run_config.solver
    config_hash = run_config.config_hash()

    def solve_one(q: PreferenceQuery) -> Optional[Itinerary]:
        try:
            filtered = filter_pool(pool, q, metric_config.filters)
            plan = solve_plan(filtered, q, run_config.solver, metric_config.daily_quota, metric_config.node_cap)
        except InfeasibleQueryError as e:
            logger.warning(f"Skipping query {q.id}: {e}")
            return None
        save_plan(plan, output_dir / plan_filename(plan), config_hash)
        return plan

    plans = _map(solve_one, queries, run_config.workers)
    solved = sum(1 for p in plans if p is not None)
    logger.info(f"Solved {solved}/{len(queries)} queries with {run_config.solver}")
    print(json.dumps({"plans": str(output_dir), "solved": solved, "skipped": len(queries) - solved}))
    return 0


def cmd_agent(run_config: RunConfig, args: argparse.Namespace) -> int:
    pool, queries = _load_inputs(run_config)
    spec = task_spec(run_config.task)
    client = make_client(run_config.client)
    base = run_config.output_dir / f"task{spec.task}"
    config_hash = run_config.config_hash()

    def run_one(q: PreferenceQuery) -> Optional[TaskResult]:
        try:
            result = run_task(
                spec, q, pool, client, run_config.agent, run_config.metrics.filters,
                run_config.seed, run_config.client.extraction_mode,
            )
        except InfeasibleQueryError as e:
            logger.warning(f"Skipping query {q.id}: {e}")
            return None
        except ItinBenchError as e:
            logger.error(f"Query {q.id} failed: {e}")
            result = TaskResult(
                query_ref=q.id, task=spec.task, pool_mode=spec.pool_mode, error=f"{type(e).__name__}: {e}"
            )
        if result.episode is not None:
            save_episode(result.episode, base / "transcripts" / f"{q.id}.json", config_hash)
        if result.itinerary is not None:
            save_plan(result.itinerary, base / "plans" / plan_filename(result.itinerary), config_hash)
        elif result.error is not None:
            save_task_failure(result, base / "failures" / f"{q.id}.json", config_hash)
        return result

    # A scripted client replays turns in order, so it runs single-threaded
    workers = 1 if run_config.client.mock_transcript else run_config.workers
    results = _map(run_one, queries, workers)
    summary = {
        "plans": str(base / "plans"),
        "delivered": sum(1 for r in results if r is not None and r.itinerary is not None),
        "failed": sum(1 for r in results if r is not None and r.error is not None),
        "queries": len(queries),
    }
    episodes = [r.episode for r in results if r is not None and r.episode is not None]
    if episodes:
        report = tool_use_report(episodes, queries)
        report_path = base / "tool_use.json"
        report_path.write_text(
            json.dumps({"config_hash": config_hash, **report.model_dump()}, indent=2, sort_keys=True)
        )
        summary["tool_use"] = str(report_path)
    print(json.dumps(summary))
    return 0


def cmd_evaluate(run_config: RunConfig, args: argparse.Namespace) -> int:
    pool, queries = _load_inputs(run_config)
    plans = load_plans(Path(args.plans))
    if not plans:
        raise EmptyBatchError(f"No plan files in {args.plans}")
    by_id = {q.id: q for q in queries}
    items = []
    for plan in plans:
        q = by_id.get(plan.query_ref)
        if q is None:
            raise InvalidInputError(f"Plan for unknown query {plan.query_ref}")
        # Task 3 plans are scored against the filtered pool their generator saw
        given = filter_pool(pool, q, run_config.metrics.filters) if args.filtered else pool
        items.append((plan, q, given))

    report = build_report(EvaluationBatch(items, run_config.metrics, run_config.workers))
    report.metadata["config_hash"] = run_config.config_hash()
    output = _path(args.output) or run_config.output_dir / "report.json"
    report.write_json(output)
    print(json.dumps({"report": str(output), "table": report.table_row()}))
    return 0


def _parse_labelled(value: str) -> tuple[str, Path]:
    if "=" in value:
        label, path = value.split("=", 1)
        return label, Path(path)
    return Path(value).stem, Path(value)


def cmd_report(run_config: RunConfig, args: argparse.Namespace) -> int:
    rows = []
    for value in args.reports:
        label, path = _parse_labelled(value)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise InvalidInputError(f"Report not found: {path}")
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"Invalid JSON in report {path}: {e}")
        data.pop("table", None)
        rows.append((label, MetricReport(**data)))

    output = _path(args.output) or run_config.output_dir / "table.csv"
    config_hash = run_config.config_hash()
    write_table_csv(rows, output, config_hash)
    table = {label: report.table_row() for label, report in rows}
    output.with_suffix(".json").write_text(
        json.dumps({"config_hash": config_hash, "rows": table}, indent=2, sort_keys=True)
    )
    print(json.dumps({"table": str(output), "rows": table}))
    return 0


def cmd_viz(run_config: RunConfig, args: argparse.Namespace) -> int:
    run_config.require("pool_path")
    pool = load_pool(run_config.pool_path)
    plan = load_plan(Path(args.plan))
    collection = plan_geojson(plan, pool, seed=run_config.seed, config_hash=run_config.config_hash())
    output = _path(args.output) or run_config.output_dir / f"{Path(args.plan).stem}.geojson"
    save_geojson(collection, output)
    print(json.dumps({"figure": str(output), "features": len(collection["features"])}))
    return 0


def cmd_serve(run_config: RunConfig, args: argparse.Namespace) -> int:
    import uvicorn

    from . import service

    service.state.run_config = run_config
    uvicorn.run(service.app, host=args.host, port=args.port, log_level="info")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "gen-queries": cmd_gen_queries,
    "solve": cmd_solve,
    "agent": cmd_agent,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "viz": cmd_viz,
    "serve": cmd_serve,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run config JSON file")
    common.add_argument("--seed", type=int, help="Seed for every random stage")
    common.add_argument("--workers", type=int, help="Worker pool size")
    common.add_argument("--output-dir", help="Directory for artifacts")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(prog="itinbench", description="Itinerary planning benchmark pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="Raw business records to a pool file")
    p.add_argument("--businesses", help="Business records, JSON lines")
    p.add_argument("--attributes", help="Review-derived ratings, JSON lines")
    p.add_argument("--output", help="Pool file to write")

    p = sub.add_parser("gen-queries", parents=[common], help="Sample preference queries")
    p.add_argument("--seeds", help='Seed range such as "0-99"')
    p.add_argument("--output", help="Query file to write")

    p = sub.add_parser("solve", parents=[common], help="Plan every query with a solver")
    p.add_argument("--pool")
    p.add_argument("--queries")
    p.add_argument("--solver", choices=["greedy", "heldkarp", "astar"])

    p = sub.add_parser("agent", parents=[common], help="Plan every query with a chat model")
    p.add_argument("--pool")
    p.add_argument("--queries")
    p.add_argument("--task", type=int, choices=[1, 2, 3, 4])
    p.add_argument("--mock-transcript", help="Replay scripted model turns from this file")
    p.add_argument("--extraction-mode", choices=["llm", "template"])

    p = sub.add_parser("evaluate", parents=[common], help="Score a directory of plans")
    p.add_argument("--pool")
    p.add_argument("--queries")
    p.add_argument("--plans", required=True, help="Directory of plan files")
    p.add_argument("--filtered", action="store_true", help="Score against each query's filtered pool")
    p.add_argument("--output", help="Report file to write")

    p = sub.add_parser("report", parents=[common], help="Summary table from report files")
    p.add_argument("reports", nargs="+", help="report.json or label=report.json")
    p.add_argument("--output", help="CSV file to write; a .json twin is written next to it")

    p = sub.add_parser("viz", parents=[common], help="GeoJSON figure of one plan")
    p.add_argument("--pool")
    p.add_argument("--plan", required=True)
    p.add_argument("--output")

    p = sub.add_parser("serve", parents=[common], help="Run the HTTP scoring service")
    p.add_argument("--pool")
    p.add_argument("--host", default=config.HOST)
    p.add_argument("--port", type=int, default=config.PORT)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        run_config = _run_config(args)
        save_run_config(run_config, run_config.output_dir / "run_config.json")
        return COMMANDS[args.command](run_config, args)
    except ItinBenchError as e:
        error = {"stage": args.command, "error": type(e).__name__, "message": str(e)}
        print(json.dumps(error), file=sys.stderr)
        return 1
