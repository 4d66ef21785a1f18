"""Plan scoring: failure rates, preference satisfaction, quota gap and route quality."""

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Literal, Optional, Sequence

from pydantic import BaseModel

from .clustering import kmeans_clusters
from .config import config
from .dataset import BusinessPool, satisfies
from .errors import EmptyBatchError, UndefinedMetricError
from .plan_model import SLOT_CATEGORY, Itinerary, SlotEntry, check_failures
from .querygen import Preference, PreferenceQuery
from .settings import FilterConfig, MetricConfig
from .solvers import (
    InfeasibleSizeError,
    InvalidRouteError,
    RouteInstance,
    heldkarp_multiday,
    optimize_day_route,
    plan_route_instance,
    route_distance,
)

logger = logging.getLogger(__name__)

COLUMNS = ["OOP", "MI", "Micro", "Macro", "VR", "ARG", "DG", "Total-DG", "ECJ"]
UNDEFINED = "-"
PREFERENCE_KINDS = ["budget", "cuisine", "restaurant", "hotel", "orientation"]

RouteStatus = Literal["ok", "unresolved", "infeasible_size"]


class NotEvaluableError(UndefinedMetricError):
    """The entry failed the failure checks and is skipped by preference scoring."""

    pass


class DayDistance(BaseModel):
    day: int
    stated_km: float
    optimal_km: float


class PlanRecord(BaseModel):
    """Everything scored for one plan; batch metrics are reductions over these."""

    query_ref: Optional[str]
    source: str
    out_of_pool: int
    missing: int
    evaluable: int
    satisfied: int
    unmet: dict[str, int]
    attraction_counts: list[int]
    day_distances: list[DayDistance]
    excluded_days: int
    route_status: RouteStatus
    plan_km: Optional[float] = None
    optimal_km: Optional[float] = None
    runs: Optional[int] = None
    optimal_runs: Optional[int] = None
    ecj_raw: Optional[int] = None

    @property
    def micro(self) -> Optional[float]:
        if self.evaluable == 0:
            return None
        return self.satisfied / self.evaluable

    def passes_macro(self, alpha: float) -> bool:
        micro = self.micro
        return micro is not None and micro + 1e-12 >= alpha

    def validated(self, alpha: float) -> bool:
        return self.out_of_pool == 0 and self.missing == 0 and self.passes_macro(alpha)


def preference_satisfied(
    entry: SlotEntry,
    pref: Preference,
    pool: BusinessPool,
    thresholds: Optional[FilterConfig] = None,
) -> bool:
    """Whether a resolved entry meets one preference, by the filtering predicates."""
    if not entry.evaluable:
        raise NotEvaluableError(f"Entry {entry.name!r} failed the failure checks")
    business = pool.get(entry.resolved)
    if business is None:
        raise NotEvaluableError(f"Entry {entry.name!r} resolves outside the pool")
    return satisfies(business, pref, thresholds or FilterConfig())


def count_runs(labels: Sequence[int]) -> int:
    """Number of maximal runs of equal consecutive labels."""
    return sum(1 for i, label in enumerate(labels) if i == 0 or labels[i - 1] != label)


def _is_optimal(stated: float, optimal: float) -> bool:
    return stated - optimal <= config.OPTIMALITY_RTOL * max(optimal, 0.0)


def _gap(stated: float, optimal: float) -> float:
    return 0.0 if _is_optimal(stated, optimal) else stated - optimal


# --- Per-plan scoring ------------------------------------------------------------


def _score_preferences(it: Itinerary, q: PreferenceQuery, pool: BusinessPool, thresholds: FilterConfig):
    evaluable = satisfied = 0
    unmet = {kind: 0 for kind in PREFERENCE_KINDS}
    for _, slot, entry in it.entries():
        if not entry.evaluable:
            continue
        for pref in q.preferences_for(SLOT_CATEGORY[slot]):
            try:
                ok = preference_satisfied(entry, pref, pool, thresholds)
            except NotEvaluableError:
                continue
            evaluable += 1
            if ok:
                satisfied += 1
            else:
                unmet[pref.kind] += 1
    return evaluable, satisfied, unmet


def _score_days(it: Itinerary, pool: BusinessPool, cap: int) -> tuple[list[DayDistance], int]:
    distances = []
    excluded = 0
    for index, day in enumerate(it.days):
        entries = [day.accommodation] + day.attractions
        if not day.attractions or len(day.attractions) > cap or any(not e.evaluable for e in entries):
            excluded += 1
            continue
        businesses = [pool.get(e.resolved) for e in entries]
        if any(b is None for b in businesses):
            excluded += 1
            continue
        hotel, attractions = businesses[0], businesses[1:]
        inst = RouteInstance([hotel.location], [a.location for a in attractions], [len(attractions)])
        stated = route_distance(inst, inst.sequential_orders())
        optimal = optimize_day_route(hotel.location, [a.location for a in attractions], cap).total_km
        distances.append(DayDistance(day=index, stated_km=stated, optimal_km=optimal))
    return distances, excluded


def score_plan(
    it: Itinerary,
    q: PreferenceQuery,
    pool: BusinessPool,
    metric_config: Optional[MetricConfig] = None,
) -> PlanRecord:
    metric_config = metric_config or MetricConfig()
    it = check_failures(it, pool)
    evaluable, satisfied, unmet = _score_preferences(it, q, pool, metric_config.filters)
    day_distances, excluded_days = _score_days(it, pool, metric_config.day_route_cap)

    record = dict(
        query_ref=it.query_ref or q.id,
        source=it.source,
        out_of_pool=it.count_flag("out_of_pool"),
        missing=it.count_flag("missing"),
        evaluable=evaluable,
        satisfied=satisfied,
        unmet=unmet,
        attraction_counts=[len(day.attractions) for day in it.days],
        day_distances=day_distances,
        excluded_days=excluded_days,
        route_status="ok",
    )

    try:
        route = plan_route_instance(it, pool)
        solution = heldkarp_multiday(route.instance, metric_config.node_cap)
    except InvalidRouteError as e:
        logger.debug(f"Plan {record['query_ref']} has no whole-plan route: {e}")
        record["route_status"] = "unresolved"
        return PlanRecord(**record)
    except InfeasibleSizeError as e:
        logger.info(f"Plan {record['query_ref']} excluded from whole-plan metrics: {e}")
        record["route_status"] = "infeasible_size"
        return PlanRecord(**record)

    inst = route.instance
    stated_km = route_distance(inst, inst.sequential_orders())
    clusters = kmeans_clusters(route.hotels + route.attractions, seed=metric_config.cluster_seed)
    labels = [clusters.labels[a.id] for a in route.attractions]
    runs = count_runs(labels)
    if _is_optimal(stated_km, solution.total_km):
        optimal_runs = runs
    else:
        optimal_runs = count_runs([labels[j] for j in solution.sequence])

    record.update(
        plan_km=stated_km,
        optimal_km=solution.total_km,
        runs=runs,
        optimal_runs=optimal_runs,
        ecj_raw=runs - optimal_runs,
    )
    return PlanRecord(**record)


# --- Batches -------------------------------------------------------------------


class EvaluationBatch:
    """Plans with their queries and the pools their generators were given.

    Per-plan records are computed once, on a bounded worker pool.
    """

    def __init__(
        self,
        plans: Sequence[tuple[Itinerary, PreferenceQuery, BusinessPool]],
        metric_config: Optional[MetricConfig] = None,
        workers: int = 1,
    ):
        self.plans = list(plans)
        self.config = metric_config or MetricConfig()
        self.workers = max(1, workers)
        self._records: Optional[list[PlanRecord]] = None

    def __len__(self) -> int:
        return len(self.plans)

    @property
    def records(self) -> list[PlanRecord]:
        if self._records is None:
            self._records = self._score_all()
        return self._records

    def _score_all(self) -> list[PlanRecord]:
        def run(item):
            it, q, pool = item
            return score_plan(it, q, pool, self.config)

        if self.workers == 1 or len(self.plans) <= 1:
            records = [run(item) for item in self.plans]
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                records = list(executor.map(run, self.plans))
        logger.info(f"Scored {len(records)} plans")
        return records


def _require_plans(batch: EvaluationBatch) -> list[PlanRecord]:
    if len(batch) == 0:
        raise EmptyBatchError("Cannot score an empty batch")
    return batch.records


def _require_evaluable(batch: EvaluationBatch) -> list[PlanRecord]:
    records = _require_plans(batch)
    if sum(r.evaluable for r in records) == 0:
        raise UndefinedMetricError("No evaluable entries in the batch")
    return records


def _percent(count: int, total: int) -> float:
    return 100.0 * count / total


def failure_rates(batch: EvaluationBatch) -> tuple[float, float]:
    """(out-of-pool %, missing-information %) over plans."""
    records = _require_plans(batch)
    oop = sum(1 for r in records if r.out_of_pool > 0)
    mi = sum(1 for r in records if r.missing > 0)
    return _percent(oop, len(records)), _percent(mi, len(records))


def micro_rate(batch: EvaluationBatch) -> float:
    records = _require_evaluable(batch)
    return _percent(sum(r.satisfied for r in records), sum(r.evaluable for r in records))


def macro_rate(batch: EvaluationBatch) -> float:
    records = _require_evaluable(batch)
    alpha = batch.config.macro_threshold
    return _percent(sum(1 for r in records if r.passes_macro(alpha)), len(records))


def validated_rate(batch: EvaluationBatch) -> float:
    records = _require_evaluable(batch)
    alpha = batch.config.macro_threshold
    return _percent(sum(1 for r in records if r.validated(alpha)), len(records))


class ArgResult(BaseModel):
    signed: float
    pct: float
    mean_per_day: float


def arg(batch: EvaluationBatch) -> ArgResult:
    """Attraction quota gap, both as the signed mean and as a normalized magnitude."""
    records = _require_plans(batch)
    counts = [c for r in records for c in r.attraction_counts]
    if not counts:
        raise UndefinedMetricError("No days in the batch")
    beta = batch.config.daily_quota
    signed = math.fsum(c - beta for c in counts) / len(counts)
    mean = math.fsum(counts) / len(counts)
    return ArgResult(signed=signed, pct=abs(mean - beta) / beta * 100.0, mean_per_day=mean)


def day_distance_gap(batch: EvaluationBatch) -> float:
    records = _require_plans(batch)
    days = [d for r in records for d in r.day_distances]
    optimal = math.fsum(d.optimal_km for d in days)
    if not days or optimal <= 0.0:
        raise UndefinedMetricError("No day qualifies for the day distance gap")
    return 100.0 * math.fsum(_gap(d.stated_km, d.optimal_km) for d in days) / optimal


def _routed(batch: EvaluationBatch) -> list[PlanRecord]:
    records = [r for r in _require_plans(batch) if r.route_status == "ok"]
    if not records:
        raise UndefinedMetricError("No plan qualifies for whole-plan route metrics")
    return records


def total_distance_gap(batch: EvaluationBatch) -> float:
    records = _routed(batch)
    optimal = math.fsum(r.optimal_km for r in records)
    if optimal <= 0.0:
        raise UndefinedMetricError("Optimal routes have zero length")
    return 100.0 * math.fsum(_gap(r.plan_km, r.optimal_km) for r in records) / optimal


def extra_cluster_jump(batch: EvaluationBatch) -> float:
    records = _routed(batch)
    optimal_runs = sum(r.optimal_runs for r in records)
    return _percent(sum(r.ecj_raw for r in records), optimal_runs)


def error_breakdown(batch: EvaluationBatch) -> dict[str, int]:
    """Unmet (entry, preference) pairs by kind, plus flagged entry counts."""
    records = _require_plans(batch)
    breakdown = {kind: sum(r.unmet[kind] for r in records) for kind in PREFERENCE_KINDS}
    breakdown["out_of_pool"] = sum(r.out_of_pool for r in records)
    breakdown["missing"] = sum(r.missing for r in records)
    return breakdown


# --- Report --------------------------------------------------------------------


class MetricReport(BaseModel):
    oop: Optional[float] = None
    mi: Optional[float] = None
    micro: Optional[float] = None
    macro: Optional[float] = None
    vr: Optional[float] = None
    arg_signed: Optional[float] = None
    arg_pct: Optional[float] = None
    arg_mean_per_day: Optional[float] = None
    dg_pct: Optional[float] = None
    total_dg_pct: Optional[float] = None
    ecj_pct: Optional[float] = None
    plans: int = 0
    excluded_days: int = 0
    unresolved_plans: int = 0
    infeasible_size_plans: int = 0
    errors: dict[str, str] = {}
    error_breakdown: dict[str, int] = {}
    metadata: dict = {}
    records: list[PlanRecord] = []

    def table_row(self) -> dict[str, str]:
        """The summary row, "-" where a metric is undefined."""
        def fmt(value: Optional[float]) -> str:
            return UNDEFINED if value is None else f"{value:.1f}"

        if self.arg_pct is None or self.arg_mean_per_day is None:
            arg_cell = UNDEFINED
        else:
            arg_cell = f"{self.arg_pct:.1f} ({self.arg_mean_per_day:.2f})"
        return {
            "OOP": fmt(self.oop),
            "MI": fmt(self.mi),
            "Micro": fmt(self.micro),
            "Macro": fmt(self.macro),
            "VR": fmt(self.vr),
            "ARG": arg_cell,
            "DG": fmt(self.dg_pct),
            "Total-DG": fmt(self.total_dg_pct),
            "ECJ": fmt(self.ecj_pct),
        }

    def to_json(self) -> str:
        return json.dumps(
            {"table": self.table_row(), **self.model_dump(mode="json")}, indent=2, sort_keys=True
        )

    def write_json(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        logger.info(f"Report written to {path}")

    def write_csv(self, path: Path, label: str = "") -> None:
        write_table_csv([(label, self)], path)


def write_table_csv(
    rows: Sequence[tuple[str, MetricReport]], path: Path, config_hash: Optional[str] = None
) -> None:
    """One summary row per labelled report, then a config_hash row when a hash is given."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["Method"] + COLUMNS)
        for label, report in rows:
            row = report.table_row()
            writer.writerow([label] + [row[c] for c in COLUMNS])
        if config_hash is not None:
            writer.writerow(["config_hash", config_hash])
    logger.info(f"Table written to {path}")


def _metadata(metric_config: MetricConfig) -> dict:
    return {
        "macro_threshold": metric_config.macro_threshold,
        "daily_quota": metric_config.daily_quota,
        "node_cap": metric_config.node_cap,
        "day_route_cap": metric_config.day_route_cap,
        "cluster_seed": metric_config.cluster_seed,
        "filters": metric_config.filters.model_dump(),
        "distance": f"haversine, earth radius {config.EARTH_RADIUS_KM} km",
        "optimality_rtol": config.OPTIMALITY_RTOL,
        "macro_comparison": "inclusive",
        "arg": "signed mean and normalized magnitude of mean attractions per day",
        "ecj": (
            "pooled (runs - optimal runs) over pooled optimal runs, x100; runs are maximal same-cluster "
            "stretches of the attraction sequence, re-entries counted; per-plan differences are not clamped"
        ),
        "gaps": "ratios of summed excess kilometres to summed optimal kilometres, x100",
    }


def build_report(batch: EvaluationBatch, include_records: bool = True) -> MetricReport:
    """Every metric, undefined ones recorded in ``errors`` instead of raised."""
    fields: dict = {"errors": {}}

    def attempt(column: str, fn: Callable):
        try:
            return fn()
        except UndefinedMetricError as e:
            fields["errors"][column] = str(e)
            return None

    rates = attempt("OOP/MI", lambda: failure_rates(batch))
    if rates is not None:
        fields["oop"], fields["mi"] = rates
    fields["micro"] = attempt("Micro", lambda: micro_rate(batch))
    fields["macro"] = attempt("Macro", lambda: macro_rate(batch))
    fields["vr"] = attempt("VR", lambda: validated_rate(batch))
    arg_result = attempt("ARG", lambda: arg(batch))
    if arg_result is not None:
        fields["arg_signed"] = arg_result.signed
        fields["arg_pct"] = arg_result.pct
        fields["arg_mean_per_day"] = arg_result.mean_per_day
    fields["dg_pct"] = attempt("DG", lambda: day_distance_gap(batch))
    fields["total_dg_pct"] = attempt("Total-DG", lambda: total_distance_gap(batch))
    fields["ecj_pct"] = attempt("ECJ", lambda: extra_cluster_jump(batch))
    breakdown = attempt("errors", lambda: error_breakdown(batch))

    records = batch.records if len(batch) else []
    report = MetricReport(
        **fields,
        plans=len(records),
        excluded_days=sum(r.excluded_days for r in records),
        unresolved_plans=sum(1 for r in records if r.route_status == "unresolved"),
        infeasible_size_plans=sum(1 for r in records if r.route_status == "infeasible_size"),
        error_breakdown=breakdown or {},
        metadata=_metadata(batch.config),
        records=records if include_records else [],
    )
    if report.errors:
        logger.warning(f"Undefined metrics: {sorted(report.errors)}")
    return report
