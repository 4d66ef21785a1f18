"""Task prompts, the five-tool ReAct loop and tool-use metrics."""

import json
import logging
import re
from pathlib import Path
from typing import Literal, Optional, Sequence

from pydantic import BaseModel

from .chat_client import ChatClient, ChatClientError
from .clustering import cluster_summary_text, kmeans_clusters
from .config import config
from .dataset import Business, BusinessPool, describe_business, describe_pool, filter_pool, search_category
from .errors import EmptyBatchError, InvalidInputError, ItinBenchError, UndefinedMetricError
from .plan_model import Itinerary, PlanParseError, parse_itinerary, parse_plan_text
from .prompts import NO_ROUTE_PROMPT, REACT_PROMPT, ROUTE_PROMPT, extraction_prompt
from .querygen import (
    BUDGETS,
    CUISINES,
    HOTEL_ATTRIBUTES,
    ORIENTATIONS,
    RESTAURANT_ATTRIBUTES,
    Preference,
    PreferenceQuery,
    render_query_text,
)
from .settings import AgentLimits, FilterConfig

logger = logging.getLogger(__name__)

SYSTEM_MESSAGE = "You are a helpful travel planning assistant."

ToolName = Literal["AccommodationSearch", "AttractionSearch", "RestaurantSearch", "BusinessClusterSearch", "Planner"]
TOOL_NAMES = ("AccommodationSearch", "AttractionSearch", "RestaurantSearch", "BusinessClusterSearch", "Planner")
SEARCH_TOOLS = {
    "AccommodationSearch": ("hotel", "hotel", HOTEL_ATTRIBUTES),
    "AttractionSearch": ("attraction", "orientation", ORIENTATIONS),
    "RestaurantSearch": ("restaurant", "restaurant", RESTAURANT_ATTRIBUTES),
}
NO_MATCHES = "No matches found."

Outcome = Literal["delivered", "order_dead_loop", "argument_dead_loop", "step_limit", "failed_transport"]
OUTCOMES = ("delivered", "order_dead_loop", "argument_dead_loop", "step_limit", "failed_transport")


class ContextOverflowError(ItinBenchError):
    """A prompt exceeds the configured context size."""

    def __init__(self, size: int, limit: int):
        super().__init__(f"Prompt of {size} bytes exceeds the limit of {limit} bytes")
        self.size = size
        self.limit = limit


class ActionParseError(ItinBenchError):
    """A model turn does not hold exactly one well-formed tool call."""

    pass


class TaskSpec(BaseModel):
    task: int
    pool_mode: Literal["full", "filtered", "tools"]
    route: bool
    template: Literal["no_route", "route", "react"]


TASKS = {
    1: TaskSpec(task=1, pool_mode="full", route=False, template="no_route"),
    2: TaskSpec(task=2, pool_mode="full", route=True, template="route"),
    3: TaskSpec(task=3, pool_mode="filtered", route=True, template="route"),
    4: TaskSpec(task=4, pool_mode="tools", route=True, template="react"),
}


def task_spec(task: int) -> TaskSpec:
    if task not in TASKS:
        raise InvalidInputError(f"Unknown task: {task}")
    return TASKS[task]


def _check_size(prompt: str, limit: int) -> str:
    size = len(prompt.encode("utf-8"))
    if size > limit:
        raise ContextOverflowError(size, limit)
    return prompt


def _query_text(q: PreferenceQuery) -> str:
    return q.text or render_query_text(q)


def build_task_prompt(
    spec: TaskSpec,
    q: PreferenceQuery,
    pool: BusinessPool,
    cluster_text: Optional[str] = None,
    limit: int = config.CONTEXT_LIMIT_BYTES,
) -> str:
    """The single-shot planning prompt of tasks 1-3."""
    if spec.template == "react":
        raise InvalidInputError("Task 4 is driven by the tool-use loop, not a single prompt")
    given = describe_pool(pool)
    if spec.pool_mode == "filtered":
        if cluster_text is None:
            raise InvalidInputError("Task 3 prompts need the cluster summary")
        given += "\n\nBusiness clusters:\n" + cluster_text
    template = ROUTE_PROMPT if spec.route else NO_ROUTE_PROMPT
    return _check_size(template.format(given_information=given, query=_query_text(q)), limit)


def react_prompt(query_text: str, scratchpad: str) -> str:
    return REACT_PROMPT.format(query=query_text, scratchpad=scratchpad)


# --- Actions -------------------------------------------------------------------


class ToolCall(BaseModel):
    tool: ToolName
    budget: Optional[str] = None
    cuisine: Optional[str] = None
    prefs: list[str] = []
    unknown: list[str] = []
    query: Optional[str] = None
    raw: str = ""

    def key(self) -> tuple:
        """Identity of the call for loop detection; raw text is ignored."""
        return (self.tool, self.budget, self.cuisine, tuple(self.prefs), tuple(self.unknown), self.query)


_CALL_START = re.compile(r"([A-Za-z]+)\s*\[")


def _bracket_content(text: str, open_index: int) -> tuple[str, int]:
    depth = 0
    for i in range(open_index, len(text)):
        if text[i] == "[":
            depth += 1
        elif text[i] == "]":
            depth -= 1
            if depth == 0:
                return text[open_index + 1:i], i
    raise ActionParseError(f"Unbalanced brackets in action: {text[open_index:]!r}")


def _split_top_level(content: str) -> list[str]:
    parts, depth, current = [], 0, []
    for ch in content:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    parts.append("".join(current))
    return [p.strip() for p in parts if p.strip()]


def _match_keyword(text: str, options: Sequence[str]) -> Optional[str]:
    folded = text.casefold()
    # Longest option first so "Asian Fusion" wins over shorter overlaps
    for option in sorted(options, key=len, reverse=True):
        if re.search(rf"\b{re.escape(option.casefold())}\b", folded):
            return option
    return None


def _parse_search(tool: str, content: str, raw: str) -> ToolCall:
    _, _, attributes = SEARCH_TOOLS[tool]
    parts = _split_top_level(content)
    budget = None
    cuisine = None
    pref_items: list[str] = []
    for index, part in enumerate(parts):
        if part.startswith("["):
            pref_items.extend(p.strip() for p in part.strip("[]").split(",") if p.strip())
        elif index == 0:
            budget = _match_keyword(part, BUDGETS)
        elif tool == "RestaurantSearch" and cuisine is None:
            cuisine = _match_keyword(part, CUISINES)
            if cuisine is None:
                pref_items.append(part)
        else:
            pref_items.append(part)

    prefs, unknown = [], []
    for item in pref_items:
        value = _match_keyword(item, attributes)
        if value is None:
            unknown.append(item.casefold())
        elif value not in prefs:
            prefs.append(value)
    return ToolCall(tool=tool, budget=budget, cuisine=cuisine, prefs=prefs, unknown=unknown, raw=raw)


def parse_action(model_text: str) -> ToolCall:
    """Read the single tool call out of one model turn."""
    calls = [m for m in _CALL_START.finditer(model_text)]
    known = [m for m in calls if m.group(1) in TOOL_NAMES]
    if not known:
        if calls:
            raise ActionParseError(f"Unknown tool: {calls[0].group(1)}")
        raise ActionParseError("No action found; call exactly one tool, e.g. AccommodationSearch[...]")
    if len(known) > 1:
        raise ActionParseError("Each action calls one tool once; found several calls")

    match = known[0]
    tool = match.group(1)
    content, end = _bracket_content(model_text, match.end() - 1)
    raw = model_text[match.start():end + 1]
    if tool == "BusinessClusterSearch":
        return ToolCall(tool=tool, raw=raw)
    if tool == "Planner":
        return ToolCall(tool=tool, query=content.strip(), raw=raw)
    return _parse_search(tool, content, raw)


def _thought_of(model_text: str, call: Optional[ToolCall]) -> str:
    text = model_text
    if call is not None and call.raw in text:
        text = text[:text.index(call.raw)]
    text = re.sub(r"(?im)^\s*(thought|action)\s*\d*\s*:\s*", "", text)
    return text.strip()


# --- Tools ---------------------------------------------------------------------


class Notebook:
    """Observations collected by the tools, in call order."""

    def __init__(self):
        self.sections: list[tuple[str, str, list[Business]]] = []

    def add(self, title: str, body: str, businesses: Optional[list[Business]] = None) -> None:
        self.sections.append((title, body, businesses or []))

    def businesses(self, category: Optional[str] = None) -> list[Business]:
        seen: set[str] = set()
        found = []
        for _, _, businesses in self.sections:
            for b in businesses:
                if b.id not in seen and (category is None or b.category == category):
                    seen.add(b.id)
                    found.append(b)
        return found

    def is_empty(self) -> bool:
        return not self.businesses()

    def text(self) -> str:
        return "\n\n".join(f"{title}:\n{body}" for title, body, _ in self.sections)


def _call_preferences(call: ToolCall) -> list[Preference]:
    _, kind, _ = SEARCH_TOOLS[call.tool]
    prefs = []
    if call.budget:
        prefs.append(Preference(kind="budget", value=call.budget))
    if call.cuisine:
        prefs.append(Preference(kind="cuisine", value=call.cuisine))
    prefs.extend(Preference(kind=kind, value=value) for value in call.prefs)
    return prefs


def dispatch_tool(
    call: ToolCall,
    pool: BusinessPool,
    notebook: Notebook,
    client: Optional[ChatClient] = None,
    query_text: str = "",
    thresholds: Optional[FilterConfig] = None,
    seed: int = 0,
    limit: int = config.CONTEXT_LIMIT_BYTES,
) -> str:
    """Run one tool call and return its observation text."""
    thresholds = thresholds or FilterConfig()

    if call.tool in SEARCH_TOOLS:
        category, _, _ = SEARCH_TOOLS[call.tool]
        matches = search_category(pool, category, _call_preferences(call), thresholds)
        if not matches:
            return NO_MATCHES
        observation = "\n".join(describe_business(b) for b in matches)
        notebook.add(call.raw or call.tool, observation, matches)
        return observation

    if call.tool == "BusinessClusterSearch":
        candidates = notebook.businesses("hotel") + notebook.businesses("attraction")
        if not candidates:
            return "Error: no hotels or attractions in the Notebook yet. Search for them first."
        summary = cluster_summary_text(kmeans_clusters(candidates, seed=seed), candidates)
        notebook.add("Business clusters", summary)
        return summary

    if notebook.is_empty():
        return "Error: the Notebook is empty. Collect information before calling the Planner."
    if client is None:
        raise InvalidInputError("The Planner tool needs a chat client")
    try:
        prompt = _check_size(
            ROUTE_PROMPT.format(given_information=notebook.text(), query=call.query or query_text), limit
        )
    except ContextOverflowError as e:
        return f"Error: {e}"
    return client.complete(SYSTEM_MESSAGE, prompt)


# --- Episodes ------------------------------------------------------------------


class Step(BaseModel):
    thought: str
    action_text: str
    action: Optional[ToolCall] = None
    observation: str


class Episode(BaseModel):
    query_ref: Optional[str]
    steps: list[Step] = []
    outcome: Outcome = "step_limit"
    plan_text: Optional[str] = None
    turns: list[str] = []

    def calls(self) -> list[ToolCall]:
        return [s.action for s in self.steps if s.action is not None]


class _RecordingClient:
    """Keeps every model turn so an episode can be replayed."""

    def __init__(self, client: ChatClient):
        self.client = client
        self.turns: list[str] = []

    def complete(self, system: str, user: str) -> str:
        turn = self.client.complete(system, user)
        self.turns.append(turn)
        return turn


def detect_dead_loop(
    calls: Sequence[ToolCall],
    repeats: int = config.DEAD_LOOP_REPEATS,
    max_cycle: int = config.MAX_CYCLE_LENGTH,
) -> Optional[str]:
    """"argument" for one call repeated back to back, "order" for a repeating cycle."""
    keys = [c.key() for c in calls]
    for i in range(len(keys) - repeats + 1):
        if len(set(keys[i:i + repeats])) == 1:
            return "argument"
    for length in range(2, max_cycle + 1):
        span = length * repeats
        for i in range(len(keys) - span + 1):
            block = keys[i:i + length]
            if len(set(block)) == length and keys[i:i + span] == block * repeats:
                return "order"
    return None


def run_react_episode(
    q: PreferenceQuery,
    pool: BusinessPool,
    client: ChatClient,
    limits: Optional[AgentLimits] = None,
    thresholds: Optional[FilterConfig] = None,
    seed: int = 0,
) -> Episode:
    limits = limits or AgentLimits()
    recorder = _RecordingClient(client)
    notebook = Notebook()
    query_text = _query_text(q)
    episode = Episode(query_ref=q.id)
    scratchpad = ""

    for step_no in range(1, limits.step_limit + 1):
        try:
            model_text = recorder.complete(SYSTEM_MESSAGE, react_prompt(query_text, scratchpad))
        except ChatClientError as e:
            logger.warning(f"Episode {q.id} stopped on transport failure: {e}")
            episode.outcome = "failed_transport"
            break

        try:
            call: Optional[ToolCall] = parse_action(model_text)
        except ActionParseError as e:
            call = None
            observation = f"Error: {e}"
        thought = _thought_of(model_text, call)

        if call is not None:
            loop = detect_dead_loop(episode.calls() + [call], limits.dead_loop_repeats, limits.max_cycle_length)
            if loop is not None:
                episode.steps.append(Step(thought=thought, action_text=call.raw, action=call, observation=""))
                episode.outcome = f"{loop}_dead_loop"
                logger.info(f"Episode {q.id}: {loop} dead loop at step {step_no}")
                break
            try:
                observation = dispatch_tool(
                    call, pool, notebook, recorder, query_text, thresholds, seed, limits.context_limit_bytes
                )
            except ChatClientError as e:
                logger.warning(f"Episode {q.id} stopped on transport failure in the Planner: {e}")
                episode.steps.append(Step(thought=thought, action_text=call.raw, action=call, observation=""))
                episode.outcome = "failed_transport"
                break

        action_text = call.raw if call is not None else ""
        episode.steps.append(Step(thought=thought, action_text=action_text, action=call, observation=observation))
        if call is not None and call.tool == "Planner" and not observation.startswith("Error:"):
            episode.outcome = "delivered"
            episode.plan_text = observation
            break
        scratchpad += (
            f"\nThought {step_no}: {thought}\nAction {step_no}: {action_text}\nObservation {step_no}: {observation}"
        )
    else:
        logger.info(f"Episode {q.id} hit the step limit of {limits.step_limit}")

    episode.turns = recorder.turns
    return episode


def save_episode(episode: Episode, path: Path, config_hash: Optional[str] = None) -> None:
    """Write the transcript; its "turns" field replays as a scripted client."""
    data = episode.model_dump(mode="json")
    if config_hash is not None:
        data["config_hash"] = config_hash
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)


def load_episode(path: Path) -> Episode:
    try:
        with open(path, "r") as f:
            return Episode(**json.load(f))
    except FileNotFoundError:
        raise InvalidInputError(f"Transcript not found: {path}")
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"Invalid JSON in transcript {path}: {e}")


# --- Plan extraction and tasks ---------------------------------------------------


_JSON_ARRAY = re.compile(r"\[.*\]", re.DOTALL)


def extract_plan(
    client: Optional[ChatClient],
    plan_text: str,
    mode: str = "llm",
    source: str = "llm-task1",
    query_ref: Optional[str] = None,
) -> Itinerary:
    """Turn plan prose into an Itinerary, by model extraction or the template parser."""
    if mode == "template":
        return parse_itinerary(parse_plan_text(plan_text), source, query_ref)
    if client is None:
        raise InvalidInputError("LLM extraction needs a chat client")
    reply = client.complete(SYSTEM_MESSAGE, extraction_prompt(plan_text))
    match = _JSON_ARRAY.search(reply)
    if match is None:
        raise PlanParseError("$", "extraction reply holds no JSON array")
    try:
        document = json.loads(match.group(0))
    except json.JSONDecodeError as e:
        raise PlanParseError("$", f"extraction reply is not valid JSON: {e}")
    return parse_itinerary(document, source, query_ref)


class TaskResult(BaseModel):
    query_ref: Optional[str]
    task: int
    plan_text: Optional[str] = None
    itinerary: Optional[Itinerary] = None
    episode: Optional[Episode] = None
    pool_mode: str = "full"
    error: Optional[str] = None


def task_pool(spec: TaskSpec, q: PreferenceQuery, pool: BusinessPool, thresholds: FilterConfig) -> BusinessPool:
    """The pool the generator sees, which is also the pool its plan is scored against."""
    if spec.pool_mode == "filtered":
        return filter_pool(pool, q, thresholds)
    return pool


def run_task(
    spec: TaskSpec,
    q: PreferenceQuery,
    pool: BusinessPool,
    client: ChatClient,
    limits: Optional[AgentLimits] = None,
    thresholds: Optional[FilterConfig] = None,
    seed: int = 0,
    extraction_mode: str = "llm",
) -> TaskResult:
    limits = limits or AgentLimits()
    thresholds = thresholds or FilterConfig()
    source = f"llm-task{spec.task}"
    result = TaskResult(query_ref=q.id, task=spec.task, pool_mode=spec.pool_mode)

    if spec.template == "react":
        episode = run_react_episode(q, pool, client, limits, thresholds, seed)
        result.episode = episode
        if episode.outcome != "delivered":
            return result
        result.plan_text = episode.plan_text
    else:
        given_pool = task_pool(spec, q, pool, thresholds)
        cluster_text = None
        if spec.pool_mode == "filtered":
            candidates = given_pool.hotels + given_pool.attractions
            cluster_text = cluster_summary_text(kmeans_clusters(candidates, seed=seed), candidates)
        prompt = build_task_prompt(spec, q, given_pool, cluster_text, limits.context_limit_bytes)
        result.plan_text = client.complete(SYSTEM_MESSAGE, prompt)

    try:
        result.itinerary = extract_plan(client, result.plan_text, extraction_mode, source, q.id)
    except (PlanParseError, ChatClientError) as e:
        logger.warning(f"Plan extraction failed for {q.id}: {e}")
        result.error = f"{type(e).__name__}: {e}"
    return result


def save_task_failure(result: TaskResult, path: Path, config_hash: Optional[str] = None) -> None:
    """Record a task that produced no plan, with whatever text it did produce."""
    data = result.model_dump(mode="json", include={"query_ref", "task", "pool_mode", "error", "plan_text"})
    if config_hash is not None:
        data["config_hash"] = config_hash
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)


# --- Tool-use metrics ----------------------------------------------------------


def _expected_values(call: ToolCall, q: PreferenceQuery) -> list[str]:
    if call.tool == "AccommodationSearch":
        return list(q.hotel_prefs)
    if call.tool == "RestaurantSearch":
        return list(q.restaurant_prefs)
    return [q.orientation]


def call_accuracy(call: ToolCall, q: PreferenceQuery) -> tuple[int, int]:
    """(correct slots, total slots) of one search call against its query."""
    expected = _expected_values(call, q)
    correct = int(call.budget == q.budget)
    total = 1
    if call.tool == "RestaurantSearch":
        correct += int(call.cuisine == q.cuisine)
        total += 1
    matched = [p for p in call.prefs if p in expected]
    extraneous = [p for p in call.prefs if p not in expected]
    correct += len(matched)
    total += len(expected) + len(extraneous) + len(call.unknown)
    return correct, total


def parameter_accuracy(episodes: Sequence[Episode], queries: Sequence[PreferenceQuery]) -> float:
    by_id = {q.id: q for q in queries}
    correct = total = 0
    for episode in episodes:
        q = by_id.get(episode.query_ref)
        if q is None:
            raise InvalidInputError(f"No query for episode {episode.query_ref}")
        for call in episode.calls():
            if call.tool not in SEARCH_TOOLS:
                continue
            c, t = call_accuracy(call, q)
            correct += c
            total += t
    if total == 0:
        raise UndefinedMetricError("No search-tool calls to score")
    return 100.0 * correct / total


def delivery_rate(episodes: Sequence[Episode]) -> float:
    if not episodes:
        raise EmptyBatchError("No episodes")
    return 100.0 * sum(1 for e in episodes if e.outcome == "delivered") / len(episodes)


class ToolUseReport(BaseModel):
    episodes: int
    parameter_acc: Optional[float]
    delivery_rate: float
    outcomes: dict[str, int]
    order_dead_loop_pct: float
    argument_dead_loop_pct: float
    order_share_of_dead_loops: Optional[float]
    argument_share_of_dead_loops: Optional[float]


def tool_use_report(episodes: Sequence[Episode], queries: Sequence[PreferenceQuery]) -> ToolUseReport:
    rate = delivery_rate(episodes)
    try:
        accuracy: Optional[float] = parameter_accuracy(episodes, queries)
    except UndefinedMetricError:
        accuracy = None
    outcomes = {outcome: sum(1 for e in episodes if e.outcome == outcome) for outcome in OUTCOMES}
    n = len(episodes)
    loops = outcomes["order_dead_loop"] + outcomes["argument_dead_loop"]
    return ToolUseReport(
        episodes=n,
        parameter_acc=accuracy,
        delivery_rate=rate,
        outcomes=outcomes,
        order_dead_loop_pct=100.0 * outcomes["order_dead_loop"] / n,
        argument_dead_loop_pct=100.0 * outcomes["argument_dead_loop"] / n,
        order_share_of_dead_loops=100.0 * outcomes["order_dead_loop"] / loops if loops else None,
        argument_share_of_dead_loops=100.0 * outcomes["argument_dead_loop"] / loops if loops else None,
    )
