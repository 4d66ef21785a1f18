import pytest

from conftest import make_query

from itinbench.agent_harness import (
    NO_MATCHES,
    ActionParseError,
    ContextOverflowError,
    Episode,
    Notebook,
    Step,
    ToolCall,
    build_task_prompt,
    call_accuracy,
    delivery_rate,
    detect_dead_loop,
    dispatch_tool,
    extract_plan,
    load_episode,
    parameter_accuracy,
    parse_action,
    run_react_episode,
    run_task,
    save_episode,
    task_spec,
    tool_use_report,
)
from itinbench.chat_client import MockChatClient
from itinbench.dataset import filter_pool
from itinbench.errors import EmptyBatchError, InvalidInputError, UndefinedMetricError
from itinbench.plan_model import PlanParseError
from itinbench.settings import AgentLimits, FilterConfig

HOTEL_CALL = "Thought: I need somewhere cheap to stay.\nAction: AccommodationSearch[Cheap budget,[Good Quality]]"
ATTRACTION_CALL = "Thought: history next.\nAttractionSearch[Cheap budget,[History Oriented]]"
RESTAURANT_CALL = "RestaurantSearch[Cheap budget, Italian, [Good Flavor]]"
CLUSTER_CALL = "Thought: group them by area.\nBusinessClusterSearch[]"
PLANNER_CALL = "Thought: I have enough.\nPlanner[A 2-day cheap trip around history attractions]"

PLAN_REPLY = """Travel Plan:
Day 1:
Accommodation:
Name: Hotel 1 0; Address: hotel_1_0 Street
Breakfast:
Name: Rest Italian 1 0; Address: rest_italian_1_0 Street
Morning Attractions:
Name: Attr 1 0; Address: attr_1_0 Street
Lunch:
Name: Rest Italian 1 1; Address: rest_italian_1_1 Street
Afternoon Attractions:
Name: Attr 1 1; Address: attr_1_1 Street
Name: Attr 1 2; Address: attr_1_2 Street
Dinner:
Name: Rest Italian 1 2; Address: rest_italian_1_2 Street
Night Attractions:
Name: Attr 1 3; Address: attr_1_3 Street
Day 2:
Accommodation:
Name: Hotel 1 0; Address: hotel_1_0 Street
Morning Attractions:
Name: Attr 1 4; Address: attr_1_4 Street
"""

EXTRACTION_REPLY = """Here is the JSON:
[{"accommodation": {"name": "Hotel 1 0", "address": "hotel_1_0 Street"},
  "breakfast": {"name": "-", "address": "-"},
  "morning_attractions": [{"name": "Attr 1 0", "address": "attr_1_0 Street"}],
  "lunch": {"name": "-", "address": "-"},
  "afternoon_attractions": [],
  "dinner": {"name": "-", "address": "-"},
  "night_attractions": []}]
"""


def _happy_turns():
    return [HOTEL_CALL, ATTRACTION_CALL, RESTAURANT_CALL, CLUSTER_CALL, PLANNER_CALL, PLAN_REPLY]


def _call(tool="AccommodationSearch", budget="cheap", prefs=(), cuisine=None, unknown=()):
    return ToolCall(tool=tool, budget=budget, cuisine=cuisine, prefs=list(prefs), unknown=list(unknown))


# --- Action parsing ---------------------------------------------------------------


def test_parse_action_reads_budget_and_preferences():
    call = parse_action("AccommodationSearch[Moderate Budget,[Good Location, Good Service]]")
    assert call.tool == "AccommodationSearch"
    assert call.budget == "moderate"
    assert call.prefs == ["location", "service"]
    assert call.unknown == []


def test_parse_action_reads_restaurant_cuisine():
    call = parse_action(RESTAURANT_CALL)
    assert call.budget == "cheap"
    assert call.cuisine == "Italian"
    assert call.prefs == ["flavor"]


def test_parse_action_keeps_unrecognized_preferences():
    call = parse_action("AttractionSearch[Cheap budget,[History Oriented, Spooky Vibes]]")
    assert call.prefs == ["history"]
    assert call.unknown == ["spooky vibes"]


def test_parse_action_zero_argument_and_planner_calls():
    assert parse_action("BusinessClusterSearch[]").tool == "BusinessClusterSearch"
    planner = parse_action(PLANNER_CALL)
    assert planner.tool == "Planner"
    assert planner.query == "A 2-day cheap trip around history attractions"


@pytest.mark.parametrize(
    "text",
    [
        "Thought: I should look for hotels first.",
        "FlightSearch[Cheap budget]",
        "AccommodationSearch[Cheap budget,[Good Quality]] AttractionSearch[Cheap budget,[History Oriented]]",
        "AttractionSearch[Cheap budget,[Nature Oriented",
    ],
)
def test_parse_action_rejects_malformed_turns(text):
    with pytest.raises(ActionParseError):
        parse_action(text)


# --- Tools -------------------------------------------------------------------------


def test_restaurant_search_lists_matching_businesses(city_pool):
    notebook = Notebook()
    call = parse_action("RestaurantSearch[Expensive budget, Vietnamese, [Good Flavor]]")
    observation = dispatch_tool(call, city_pool, notebook)
    lines = observation.splitlines()
    assert len(lines) == 3
    assert all("Cuisine: Vietnamese" in line and "Price: $$$" in line for line in lines)
    assert len(notebook.businesses("restaurant")) == 3


def test_search_results_match_the_filtered_pool(city_pool):
    q = make_query()
    notebook = Notebook()
    dispatch_tool(parse_action(HOTEL_CALL), city_pool, notebook)
    expected = filter_pool(city_pool, q, FilterConfig())
    assert {b.id for b in notebook.businesses("hotel")} == {b.id for b in expected.hotels}


def test_search_without_matches_leaves_notebook_empty(tiny_pool):
    notebook = Notebook()
    call = parse_action("RestaurantSearch[Cheap budget, Korean, [Good Flavor]]")
    assert dispatch_tool(call, tiny_pool, notebook) == NO_MATCHES
    assert notebook.is_empty()


def test_cluster_search_needs_candidates_first(city_pool):
    observation = dispatch_tool(parse_action("BusinessClusterSearch[]"), city_pool, Notebook())
    assert observation.startswith("Error:")


def test_cluster_search_splits_twelve_candidates_into_two_clusters(city_pool):
    notebook = Notebook()
    candidates = city_pool.hotels[:2] + city_pool.attractions[:10]
    notebook.add("seed", "candidates", candidates)
    observation = dispatch_tool(parse_action("BusinessClusterSearch[]"), city_pool, notebook)
    lines = observation.splitlines()
    assert [line.split(":")[0] for line in lines] == ["Cluster 0", "Cluster 1"]


def test_planner_refuses_an_empty_notebook(city_pool):
    client = MockChatClient([])
    observation = dispatch_tool(parse_action(PLANNER_CALL), city_pool, Notebook(), client)
    assert observation.startswith("Error:")
    assert client.requests == []


def test_planner_sends_notebook_and_query(city_pool):
    notebook = Notebook()
    dispatch_tool(parse_action(HOTEL_CALL), city_pool, notebook)
    client = MockChatClient([PLAN_REPLY])
    observation = dispatch_tool(parse_action(PLANNER_CALL), city_pool, notebook, client)
    assert observation == PLAN_REPLY
    _, prompt = client.requests[0]
    assert "Hotel 1 0" in prompt
    assert "A 2-day cheap trip around history attractions" in prompt


# --- Dead loops --------------------------------------------------------------------


def test_detect_dead_loop_kinds():
    x = _call(prefs=["quality"])
    y = _call(tool="AttractionSearch", prefs=["history"])
    z = _call(tool="RestaurantSearch", cuisine="Italian", prefs=["flavor"])
    planner = ToolCall(tool="Planner", query="plan")
    assert detect_dead_loop([x, x, x]) == "argument"
    assert detect_dead_loop([x, y, x, y, x, y]) == "order"
    assert detect_dead_loop([x, y, z, planner]) is None
    assert detect_dead_loop([x, x, y, x]) is None


def test_loop_identity_ignores_raw_text():
    a = parse_action("AccommodationSearch[Cheap budget,[Good Quality]]")
    b = parse_action("AccommodationSearch[ cheap Budget , [good quality] ]")
    assert a.key() == b.key()
    assert detect_dead_loop([a, b, a]) == "argument"


# --- Episodes ------------------------------------------------------------------------


def test_episode_delivers_a_plan(city_pool):
    q = make_query()
    episode = run_react_episode(q, city_pool, MockChatClient(_happy_turns()))
    assert episode.outcome == "delivered"
    assert episode.plan_text == PLAN_REPLY
    assert [c.tool for c in episode.calls()] == [
        "AccommodationSearch",
        "AttractionSearch",
        "RestaurantSearch",
        "BusinessClusterSearch",
        "Planner",
    ]
    assert episode.steps[0].thought == "I need somewhere cheap to stay."
    assert episode.steps[3].observation.startswith("Cluster 0:")
    assert episode.turns == _happy_turns()


def test_unparseable_turn_becomes_an_error_observation(city_pool):
    turns = ["Thought: let me think about this."] + _happy_turns()
    episode = run_react_episode(make_query(), city_pool, MockChatClient(turns))
    assert episode.steps[0].action is None
    assert episode.steps[0].observation.startswith("Error:")
    assert episode.outcome == "delivered"


def test_episode_stops_on_argument_loop(city_pool):
    turns = [HOTEL_CALL] * 3 + [PLANNER_CALL, PLAN_REPLY]
    episode = run_react_episode(make_query(), city_pool, MockChatClient(turns))
    assert episode.outcome == "argument_dead_loop"
    assert len(episode.steps) == 3
    assert episode.plan_text is None


def test_episode_stops_on_order_loop(city_pool):
    turns = [HOTEL_CALL, ATTRACTION_CALL] * 3 + [PLANNER_CALL, PLAN_REPLY]
    episode = run_react_episode(make_query(), city_pool, MockChatClient(turns))
    assert episode.outcome == "order_dead_loop"
    assert len(episode.steps) == 6


def test_episode_step_limit(city_pool):
    episode = run_react_episode(
        make_query(), city_pool, MockChatClient(_happy_turns()), limits=AgentLimits(step_limit=2)
    )
    assert episode.outcome == "step_limit"
    assert len(episode.steps) == 2


def test_episode_transport_failure(city_pool):
    episode = run_react_episode(make_query(), city_pool, MockChatClient([HOTEL_CALL]))
    assert episode.outcome == "failed_transport"
    assert len(episode.steps) == 1


def test_transcripts_are_byte_identical_and_replayable(city_pool, tmp_path):
    q = make_query()
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for path in paths:
        save_episode(run_react_episode(q, city_pool, MockChatClient(_happy_turns())), path, config_hash="abc")
    assert paths[0].read_bytes() == paths[1].read_bytes()

    replayed = run_react_episode(q, city_pool, MockChatClient.from_transcript(paths[0]))
    assert replayed == load_episode(paths[0])


def test_load_episode_missing_file(tmp_path):
    with pytest.raises(InvalidInputError):
        load_episode(tmp_path / "nope.json")


# --- Task prompts and runs -------------------------------------------------------------


def test_task_prompts_differ_only_by_route_instruction(city_pool):
    q = make_query()
    first = build_task_prompt(task_spec(1), q, city_pool)
    second = build_task_prompt(task_spec(2), q, city_pool)
    assert "optimize the routes" not in first
    assert "optimize the routes" in second
    assert build_task_prompt(task_spec(1), q, city_pool) == first


def test_task_three_prompt_embeds_clusters(city_pool):
    q = make_query()
    prompt = build_task_prompt(task_spec(3), q, city_pool, cluster_text="Cluster 0: Hotel 1 0")
    assert "Business clusters:\nCluster 0: Hotel 1 0" in prompt
    with pytest.raises(InvalidInputError):
        build_task_prompt(task_spec(3), q, city_pool)


def test_task_prompt_errors(city_pool):
    q = make_query()
    with pytest.raises(InvalidInputError):
        build_task_prompt(task_spec(4), q, city_pool)
    with pytest.raises(InvalidInputError):
        task_spec(5)
    with pytest.raises(ContextOverflowError) as excinfo:
        build_task_prompt(task_spec(1), q, city_pool, limit=100)
    assert excinfo.value.limit == 100
    assert excinfo.value.size > 100


def test_run_task_two_with_llm_extraction(city_pool):
    client = MockChatClient([PLAN_REPLY, EXTRACTION_REPLY])
    result = run_task(task_spec(2), make_query(), city_pool, client)
    assert result.plan_text == PLAN_REPLY
    assert result.itinerary.source == "llm-task2"
    assert result.itinerary.query_ref == "q0000"
    assert result.itinerary.days[0].accommodation.name == "Hotel 1 0"
    assert "Hotel 1 0" in client.requests[1][1]


def test_run_task_one_with_template_extraction(city_pool):
    client = MockChatClient([PLAN_REPLY])
    result = run_task(task_spec(1), make_query(), city_pool, client, extraction_mode="template")
    it = result.itinerary
    assert len(it.days) == 2
    assert [e.name for e in it.days[0].afternoon_attractions] == ["Attr 1 1", "Attr 1 2"]
    assert it.days[1].breakfast.is_missing
    assert client.index == 1


def test_run_task_three_sees_filtered_pool_and_clusters(city_pool):
    client = MockChatClient([PLAN_REPLY])
    result = run_task(task_spec(3), make_query(), city_pool, client, extraction_mode="template")
    prompt = client.requests[0][1]
    # 2 hotels and 18 attractions pass the filters: four clusters
    assert "Cluster 3:" in prompt
    assert "Cluster 4:" not in prompt
    assert "Hotel 1 Poor" not in prompt
    assert result.pool_mode == "filtered"


def test_run_task_four_wraps_the_episode(city_pool):
    client = MockChatClient(_happy_turns())
    result = run_task(task_spec(4), make_query(), city_pool, client, extraction_mode="template")
    assert result.episode.outcome == "delivered"
    assert result.itinerary.source == "llm-task4"

    looping = run_task(task_spec(4), make_query(), city_pool, MockChatClient([HOTEL_CALL] * 3))
    assert looping.itinerary is None
    assert looping.episode.outcome == "argument_dead_loop"


def test_extract_plan_rejects_replies_without_json():
    with pytest.raises(PlanParseError):
        extract_plan(MockChatClient(["Sorry, I cannot help."]), PLAN_REPLY)
    with pytest.raises(InvalidInputError):
        extract_plan(None, PLAN_REPLY, mode="llm")


def test_run_task_records_failed_extraction(city_pool):
    client = MockChatClient(["Sorry, no plan today."])
    result = run_task(task_spec(2), make_query(), city_pool, client, extraction_mode="template")
    assert result.itinerary is None
    assert result.plan_text == "Sorry, no plan today."
    assert result.error.startswith("PlanParseError")

    llm = run_task(task_spec(1), make_query(), city_pool, MockChatClient([PLAN_REPLY, "no json here"]))
    assert llm.itinerary is None
    assert llm.error.startswith("PlanParseError")


# --- Tool-use metrics ---------------------------------------------------------------------


def test_call_accuracy_counts_budget_and_preferences():
    q = make_query(hotel_prefs=["quality", "location"])
    assert call_accuracy(_call(prefs=["quality", "location"]), q) == (3, 3)
    assert call_accuracy(_call(prefs=["quality"]), q) == (2, 3)
    assert call_accuracy(_call(budget="expensive", prefs=["quality", "location", "safety"]), q) == (2, 4)


def test_call_accuracy_for_restaurants_includes_cuisine():
    q = make_query()
    assert call_accuracy(_call(tool="RestaurantSearch", cuisine="Italian", prefs=["flavor"]), q) == (3, 3)
    assert call_accuracy(_call(tool="RestaurantSearch", cuisine="Thai", unknown=["cozy"]), q) == (1, 4)


def test_parameter_accuracy_pools_over_episodes():
    q = make_query(hotel_prefs=["quality", "location"])
    episodes = [
        Episode(query_ref=q.id, steps=[_step(_call(prefs=["quality", "location"]))]),
        Episode(query_ref=q.id, steps=[_step(_call(prefs=["quality"]))]),
    ]
    assert parameter_accuracy(episodes, [q]) == pytest.approx(100.0 * 5 / 6)


def test_parameter_accuracy_undefined_without_searches():
    q = make_query()
    episodes = [Episode(query_ref=q.id, steps=[_step(ToolCall(tool="Planner", query="plan"))])]
    with pytest.raises(UndefinedMetricError):
        parameter_accuracy(episodes, [q])


def test_delivery_rate_and_report():
    q = make_query()
    search = _step(_call(prefs=["quality"]))
    episodes = [Episode(query_ref=q.id, steps=[search], outcome="delivered") for _ in range(3)]
    episodes.append(Episode(query_ref=q.id, steps=[search], outcome="argument_dead_loop"))
    assert delivery_rate(episodes) == 75.0
    with pytest.raises(EmptyBatchError):
        delivery_rate([])

    report = tool_use_report(episodes, [q])
    assert report.episodes == 4
    assert report.outcomes["delivered"] == 3
    assert sum(report.outcomes.values()) == 4
    assert report.argument_dead_loop_pct == 25.0
    assert report.argument_share_of_dead_loops == 100.0
    assert report.order_share_of_dead_loops == 0.0
    assert report.parameter_acc == 100.0


def test_report_without_dead_loops_leaves_shares_undefined():
    q = make_query()
    report = tool_use_report([Episode(query_ref=q.id, outcome="delivered")], [q])
    assert report.parameter_acc is None
    assert report.order_share_of_dead_loops is None


def _step(call):
    return Step(thought="", action_text=call.raw, action=call, observation="")
