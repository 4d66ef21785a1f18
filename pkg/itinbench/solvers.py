"""Multi-day route optimization and plan construction.

A route instance fixes one hotel per day and a per-day attraction quota. Each
day starts at that day's hotel, visits its quota of attractions and returns to
the same hotel; the next day starts at the next day's hotel. The exact solvers
search over every quota-respecting assignment of attractions to days together
with every within-day order.
"""

import heapq
import itertools
import logging
import math
from bisect import bisect_right
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from .config import config
from .dataset import Business, BusinessPool, InfeasibleQueryError
from .errors import InvalidInputError, ItinBenchError
from .geo import DistanceMatrix, GeoPoint, build_distance_matrix, haversine_km
from .plan_model import DayPlan, Itinerary, SlotEntry
from .querygen import PreferenceQuery

logger = logging.getLogger(__name__)


class SolverError(ItinBenchError):
    """Base exception for route solver errors."""

    pass


class InvalidRouteError(SolverError):
    """Day orders do not partition the attractions under the quotas."""

    pass


class InfeasibleSizeError(SolverError):
    """Too many attractions for an exact solver."""

    def __init__(self, size: int, cap: int):
        super().__init__(f"{size} attractions exceeds the node cap of {cap}")
        self.size = size
        self.cap = cap


class RouteInstance:
    """Day hotels, attractions and quotas over one distance matrix.

    Matrix index ``d`` is day ``d``'s hotel; index ``D + j`` is attraction ``j``.
    """

    def __init__(
        self,
        day_hotels: Sequence[GeoPoint],
        attractions: Sequence[GeoPoint],
        per_day_quota: Sequence[int],
    ):
        if not day_hotels:
            raise InvalidInputError("A route instance needs at least one day")
        if len(per_day_quota) != len(day_hotels):
            raise InvalidInputError(
                f"{len(per_day_quota)} quotas for {len(day_hotels)} days"
            )
        if any(q < 1 for q in per_day_quota):
            raise InvalidInputError(f"Every day quota must be at least 1: {list(per_day_quota)}")
        if sum(per_day_quota) != len(attractions):
            raise InvalidInputError(
                f"Quotas sum to {sum(per_day_quota)} but there are {len(attractions)} attractions"
            )
        self.day_hotels = list(day_hotels)
        self.attractions = list(attractions)
        self.per_day_quota = list(per_day_quota)
        self.matrix: DistanceMatrix = build_distance_matrix(self.day_hotels + self.attractions)

        D = self.n_days
        self.cumulative = list(itertools.accumulate(self.per_day_quota))
        # visited count -> (day just finished, day about to start)
        self.boundaries = {self.cumulative[d]: (d, d + 1) for d in range(D - 1)}
        self.hotel_to_attraction = np.array(self.matrix.d[:D, D:])
        self.attraction_block = np.array(self.matrix.d[D:, D:])

    @property
    def n_days(self) -> int:
        return len(self.day_hotels)

    @property
    def n_attractions(self) -> int:
        return len(self.attractions)

    def day_of(self, position: int) -> int:
        """Day of the attraction visited at 0-based ``position`` in the sequence."""
        return bisect_right(self.cumulative, position)

    def step_cost(self, visited: int, last: int, j: int) -> float:
        """Cost of visiting attraction ``j`` after ``visited`` attractions ending at ``last``."""
        HA = self.hotel_to_attraction
        if visited == 0:
            return float(HA[0, j])
        if visited in self.boundaries:
            done, start = self.boundaries[visited]
            return float(HA[done, last] + HA[start, j])
        return float(self.attraction_block[last, j])

    def split(self, sequence: Sequence[int]) -> list[list[int]]:
        orders, start = [], 0
        for quota in self.per_day_quota:
            orders.append(list(sequence[start:start + quota]))
            start += quota
        return orders

    def sequential_orders(self) -> list[list[int]]:
        """The instance's own attraction order, split by quota."""
        return self.split(range(self.n_attractions))


class RouteSolution(BaseModel):
    total_km: float
    day_orders: list[list[int]]
    optimal: bool
    expanded: int = 0

    @property
    def sequence(self) -> list[int]:
        return [j for day in self.day_orders for j in day]


def route_distance(inst: RouteInstance, day_orders: Sequence[Sequence[int]]) -> float:
    """Kilometres of the route, each day a loop from and back to its hotel."""
    if len(day_orders) != inst.n_days:
        raise InvalidRouteError(f"{len(day_orders)} day orders for {inst.n_days} days")
    seen: set[int] = set()
    for day, order in enumerate(day_orders):
        if len(order) != inst.per_day_quota[day]:
            raise InvalidRouteError(
                f"Day {day} visits {len(order)} attractions, quota is {inst.per_day_quota[day]}"
            )
        for j in order:
            if not 0 <= j < inst.n_attractions:
                raise InvalidRouteError(f"Attraction index {j} out of range")
            if j in seen:
                raise InvalidRouteError(f"Attraction {j} visited twice")
            seen.add(j)

    d = inst.matrix.d
    D = inst.n_days
    legs = []
    for day, order in enumerate(day_orders):
        stops = [day] + [D + j for j in order] + [day]
        legs.extend(float(d[a, b]) for a, b in zip(stops, stops[1:]))
    return math.fsum(legs)


def _check_size(inst: RouteInstance, cap: int) -> None:
    if inst.n_attractions > cap:
        logger.warning(f"Refusing exact solve over {inst.n_attractions} attractions (cap {cap})")
        raise InfeasibleSizeError(inst.n_attractions, cap)


def heldkarp_multiday(inst: RouteInstance, node_cap: int = config.NODE_CAP) -> RouteSolution:
    """Bitmask dynamic program over visited-attraction sets.

    The day of the next attraction follows from how many have been visited, so
    the state is just (visited set, last attraction). Layers of equal popcount
    are relaxed together with numpy.
    """
    _check_size(inst, node_cap)
    n = inst.n_attractions
    D = inst.n_days
    HA = inst.hotel_to_attraction
    size = 1 << n

    f = np.full((size, n), np.inf)
    parent = np.full((size, n), -1, dtype=np.int8)
    bits = 1 << np.arange(n)
    f[bits, np.arange(n)] = HA[0]

    masks = np.arange(size)
    popcount = np.zeros(size, dtype=np.int64)
    for b in range(n):
        popcount += (masks >> b) & 1

    for visited in range(1, n):
        layer = masks[popcount == visited]
        if visited in inst.boundaries:
            done, start = inst.boundaries[visited]
            step = HA[done][:, None] + HA[start][None, :]
        else:
            step = inst.attraction_block
        for j in range(n):
            sel = layer[(layer & bits[j]) == 0]
            if sel.size == 0:
                continue
            cost = f[sel] + step[:, j][None, :]
            best = cost.argmin(axis=1)
            targets = sel | bits[j]
            f[targets, j] = cost[np.arange(sel.size), best]
            parent[targets, j] = best

    full = size - 1
    last = int(np.argmin(f[full] + HA[D - 1]))
    sequence = []
    mask = full
    while True:
        sequence.append(last)
        previous = int(parent[mask, last])
        mask ^= 1 << last
        if mask == 0:
            break
        last = previous
    sequence.reverse()

    day_orders = inst.split(sequence)
    return RouteSolution(total_km=route_distance(inst, day_orders), day_orders=day_orders, optimal=True)


def _prim(w: np.ndarray) -> float:
    k = len(w)
    if k <= 1:
        return 0.0
    in_tree = np.zeros(k, dtype=bool)
    in_tree[0] = True
    best = w[0].astype(float).copy()
    total = 0.0
    for _ in range(k - 1):
        best[in_tree] = np.inf
        j = int(np.argmin(best))
        total += float(best[j])
        in_tree[j] = True
        best = np.minimum(best, w[j])
    return total


def mst_lower_bound(matrix: Union[DistanceMatrix, np.ndarray], nodes: Sequence[int]) -> float:
    """Minimum spanning tree weight over the induced submatrix."""
    d = matrix.d if isinstance(matrix, DistanceMatrix) else matrix
    nodes = list(nodes)
    if len(nodes) <= 1:
        return 0.0
    return _prim(d[np.ix_(nodes, nodes)])


_GOAL = -2


class _Heuristic:
    """MST over the current node, the unvisited attractions and the remaining
    hotels contracted into a single node."""

    def __init__(self, inst: RouteInstance):
        self.inst = inst
        self.d = inst.matrix.d
        self.cache: dict[tuple[int, int], float] = {}

    def __call__(self, mask: int, last: int) -> float:
        key = (mask, last)
        if key in self.cache:
            return self.cache[key]
        inst = self.inst
        D = inst.n_days
        visited = bin(mask).count("1")
        if visited == inst.n_attractions:
            value = float(inst.hotel_to_attraction[D - 1, last])
        else:
            day_of_last = 0 if visited == 0 else inst.day_of(visited - 1)
            current = 0 if last < 0 else D + last
            nodes = [current] + [D + j for j in range(inst.n_attractions) if not mask >> j & 1]
            hotels = list(range(day_of_last, D))
            k = len(nodes)
            w = np.zeros((k + 1, k + 1))
            w[:k, :k] = self.d[np.ix_(nodes, nodes)]
            to_hotels = self.d[np.ix_(nodes, hotels)].min(axis=1)
            w[:k, k] = to_hotels
            w[k, :k] = to_hotels
            value = _prim(w)
        self.cache[key] = value
        return value


def astar_multiday(
    inst: RouteInstance,
    node_cap: int = config.NODE_CAP,
    use_heuristic: bool = True,
) -> RouteSolution:
    """Best-first search over (visited set, last attraction) states.

    With ``use_heuristic=False`` the search degrades to Dijkstra.
    """
    _check_size(inst, node_cap)
    n = inst.n_attractions
    full = (1 << n) - 1
    heuristic = _Heuristic(inst) if use_heuristic else (lambda mask, last: 0.0)

    start = (0, -1)
    best_g: dict[tuple[int, int], float] = {start: 0.0}
    came_from: dict[tuple[int, int], tuple[int, int]] = {}
    counter = itertools.count()
    heap = [(heuristic(*start), next(counter), 0.0, start)]
    expanded = 0

    while heap:
        _, _, g, state = heapq.heappop(heap)
        if g > best_g[state]:
            continue
        mask, last = state
        if last == _GOAL:
            return _finish_astar(inst, came_from, came_from[state], expanded)

        expanded += 1
        if mask == full:
            # Close the route at the final day's hotel
            total = g + float(inst.hotel_to_attraction[inst.n_days - 1, last])
            goal = (full, _GOAL)
            if total < best_g.get(goal, math.inf):
                best_g[goal] = total
                came_from[goal] = state
                heapq.heappush(heap, (total, next(counter), total, goal))
            continue

        visited = bin(mask).count("1")
        for j in range(n):
            if mask >> j & 1:
                continue
            ng = g + inst.step_cost(visited, last, j)
            successor = (mask | 1 << j, j)
            if ng < best_g.get(successor, math.inf):
                best_g[successor] = ng
                came_from[successor] = state
                heapq.heappush(heap, (ng + heuristic(*successor), next(counter), ng, successor))

    raise SolverError("A* exhausted the search space without reaching a goal")


def _finish_astar(inst, came_from, state, expanded) -> RouteSolution:
    sequence = []
    while state[1] >= 0:
        sequence.append(state[1])
        state = came_from[state]
    sequence.reverse()
    day_orders = inst.split(sequence)
    logger.debug(f"A* expanded {expanded} states over {inst.n_attractions} attractions")
    return RouteSolution(
        total_km=route_distance(inst, day_orders),
        day_orders=day_orders,
        optimal=True,
        expanded=expanded,
    )


def _sequence_cost(d: np.ndarray, inst: RouteInstance, sequence: Sequence[int]) -> float:
    D = inst.n_days
    total = 0.0
    position = 0
    for day, quota in enumerate(inst.per_day_quota):
        previous = day
        for j in sequence[position:position + quota]:
            total += d[previous, D + j]
            previous = D + j
        total += d[previous, day]
        position += quota
    return total


def brute_force_multiday(inst: RouteInstance, limit: int = 10) -> RouteSolution:
    """Exhaustive search over every attraction permutation. Small instances only."""
    _check_size(inst, limit)
    d = inst.matrix.d
    best_sequence: Optional[tuple[int, ...]] = None
    best_cost = math.inf
    for sequence in itertools.permutations(range(inst.n_attractions)):
        cost = _sequence_cost(d, inst, sequence)
        if cost < best_cost:
            best_cost = cost
            best_sequence = sequence
    day_orders = inst.split(best_sequence)
    return RouteSolution(total_km=route_distance(inst, day_orders), day_orders=day_orders, optimal=True)


def optimize_day_route(
    hotel: GeoPoint,
    day_attractions: Sequence[GeoPoint],
    cap: int = config.DAY_ROUTE_CAP,
) -> RouteSolution:
    """Shortest hotel-to-hotel loop through one day's attractions."""
    if not day_attractions:
        raise InvalidInputError("Cannot optimize a day with no attractions")
    inst = RouteInstance([hotel], day_attractions, [len(day_attractions)])
    return brute_force_multiday(inst, limit=cap)


# --- Plan construction -----------------------------------------------------------


class PlanRoute(NamedTuple):
    """The route view of an evaluated plan."""

    instance: RouteInstance
    hotels: list[Business]
    attractions: list[Business]
    day_index: list[int]


def plan_route_instance(itinerary: Itinerary, pool: BusinessPool) -> PlanRoute:
    """Route instance of a checked plan, quotas taken from the plan itself.

    Days without attractions drop out. Every remaining day needs a resolved
    hotel and resolved attractions.
    """
    hotels: list[Business] = []
    attractions: list[Business] = []
    quotas: list[int] = []
    day_index: list[int] = []
    for index, day in enumerate(itinerary.days):
        if not day.attractions:
            continue
        entries = [day.accommodation] + day.attractions
        if any(not entry.evaluable for entry in entries):
            raise InvalidRouteError(f"Day {index + 1} has unresolved hotel or attractions")
        resolved = [pool.get(entry.resolved) for entry in entries]
        if any(b is None for b in resolved):
            raise InvalidRouteError(f"Day {index + 1} references businesses outside the pool")
        hotels.append(resolved[0])
        attractions.extend(resolved[1:])
        quotas.append(len(resolved) - 1)
        day_index.append(index)
    if not hotels:
        raise InvalidRouteError("Plan has no day with attractions")
    instance = RouteInstance(
        [h.location for h in hotels], [a.location for a in attractions], quotas
    )
    return PlanRoute(instance, hotels, attractions, day_index)


def _nearest(origin: GeoPoint, candidates: Sequence[Business], exclude: set[str]) -> Business:
    available = [b for b in candidates if b.id not in exclude] or list(candidates)
    # min keeps the first of equal distances
    return min(available, key=lambda b: haversine_km(origin, b.location))


def _entry(business: Business) -> SlotEntry:
    return SlotEntry(name=business.name, address=business.address, resolved=business.id)


def _build_day(hotel: Business, attractions: list[Business], restaurants: list[Business]) -> DayPlan:
    used: set[str] = set()
    anchors = [hotel.location]
    anchors.append(attractions[0].location if attractions else hotel.location)
    afternoon = attractions[1:3]
    anchors.append(afternoon[-1].location if afternoon else anchors[-1])
    meals = []
    for anchor in anchors:
        restaurant = _nearest(anchor, restaurants, used)
        used.add(restaurant.id)
        meals.append(_entry(restaurant))
    return DayPlan(
        accommodation=_entry(hotel),
        breakfast=meals[0],
        lunch=meals[1],
        dinner=meals[2],
        morning_attractions=[_entry(a) for a in attractions[:1]],
        afternoon_attractions=[_entry(a) for a in afternoon],
        night_attractions=[_entry(a) for a in attractions[3:]],
    )


def _choose_hotel(hotels: list[Business], attractions: list[Business]) -> Business:
    return min(
        hotels,
        key=lambda h: math.fsum(haversine_km(h.location, a.location) for a in attractions) / len(attractions),
    )


def _greedy_days(
    hotel: Business, attractions: list[Business], days: int, quota: int
) -> list[list[Business]]:
    remaining = list(attractions)
    plan = []
    for _ in range(days):
        current = hotel.location
        day = []
        for _ in range(quota):
            nearest = min(remaining, key=lambda a: haversine_km(current, a.location))
            remaining.remove(nearest)
            day.append(nearest)
            current = nearest.location
        plan.append(day)
    return plan


def _greedy_choice(
    filtered: BusinessPool, q: PreferenceQuery, quota: int
) -> tuple[Business, list[list[Business]]]:
    attractions = filtered.attractions
    need = quota * q.days
    if len(attractions) < need:
        raise InfeasibleQueryError("attraction", q.id)
    if not filtered.hotels or not filtered.restaurants:
        raise InfeasibleQueryError("hotel" if not filtered.hotels else "restaurant", q.id)
    hotel = _choose_hotel(filtered.hotels, attractions)
    return hotel, _greedy_days(hotel, attractions, q.days, quota)


def greedy_plan(
    filtered: BusinessPool,
    q: PreferenceQuery,
    quota: int = config.DAILY_QUOTA,
) -> Itinerary:
    """Nearest-neighbour plan over a preference-filtered pool."""
    hotel, days = _greedy_choice(filtered, q, quota)
    restaurants = filtered.restaurants
    return Itinerary(
        days=[_build_day(hotel, day, restaurants) for day in days],
        source="greedy",
        query_ref=q.id,
    )


def solve_plan(
    filtered: BusinessPool,
    q: PreferenceQuery,
    solver: str = "greedy",
    quota: int = config.DAILY_QUOTA,
    node_cap: int = config.NODE_CAP,
) -> Itinerary:
    """Build a plan with the named solver.

    The exact solvers keep the greedy hotel and attraction set and reorder the
    attractions optimally across days.
    """
    if solver == "greedy":
        return greedy_plan(filtered, q, quota)
    if solver not in ("heldkarp", "astar"):
        raise InvalidInputError(f"Unknown solver: {solver}")

    hotel, days = _greedy_choice(filtered, q, quota)
    chosen = [a for day in days for a in day]
    inst = RouteInstance([hotel.location] * q.days, [a.location for a in chosen], [quota] * q.days)
    if solver == "heldkarp":
        solution = heldkarp_multiday(inst, node_cap)
    else:
        solution = astar_multiday(inst, node_cap)
    restaurants = filtered.restaurants
    return Itinerary(
        days=[_build_day(hotel, [chosen[j] for j in order], restaurants) for order in solution.day_orders],
        source=solver,
        query_ref=q.id,
    )
