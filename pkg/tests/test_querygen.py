import json
import random
from collections import Counter

import pytest

from itinbench.errors import InvalidInputError
from itinbench.querygen import (
    CUISINES,
    HOTEL_ATTRIBUTES,
    ORIENTATIONS,
    RESTAURANT_ATTRIBUTES,
    PreferenceQuery,
    load_queries,
    parse_query_text,
    query_generation_prompt,
    render_query_text,
    sample_query,
    sample_queries,
    save_queries,
)


def test_sample_query_is_deterministic():
    assert sample_query(42) == sample_query(42)


def test_distinct_seeds_differ():
    queries = sample_queries(range(50))
    assert len({json.dumps(q.model_dump(exclude={"id", "seed"}), sort_keys=True) for q in queries}) > 40


def test_query_ids_follow_seed():
    assert sample_query(7).id == "q0007"
    assert sample_query(7).seed == 7


def test_preference_total_between_six_and_ten():
    for q in sample_queries(range(2000)):
        assert 6 <= q.preference_count() <= 10


def test_render_matches_worked_example():
    q = PreferenceQuery(
        days=2,
        budget="moderate",
        orientation="history",
        restaurant_prefs=["environment"],
        cuisine="French",
        hotel_prefs=["quality", "location"],
    )
    assert render_query_text(q) == (
        "I want to go for a 2-day trip with a moderate budget. "
        "I want to visit some history-oriented attractions. "
        "Please find some good environment restaurants that provide French cuisine, "
        "I want to stay in a good quality hotel in a good location."
    )


def test_render_names_every_preference_once():
    for q in sample_queries(range(200)):
        text = q.text
        assert text.count(f"{q.days}-day") == 1
        assert text.count(f"{q.budget} budget") == 1
        assert text.count(f"{q.orientation}-oriented") == 1
        assert text.count(f"provide {q.cuisine} cuisine") == 1
        for pref in q.restaurant_prefs + q.hotel_prefs:
            assert f"good {pref}" in text


def test_parse_inverts_render():
    rng = random.Random(3)
    for seed in rng.sample(range(1_000_000), 1000):
        q = sample_query(seed)
        parsed = parse_query_text(q.text)
        assert parsed.same_preferences(q)


def test_parse_rejects_free_text():
    with pytest.raises(InvalidInputError):
        parse_query_text("Plan me something nice in Philadelphia.")


def test_query_validation_rejects_unknown_options():
    with pytest.raises(ValueError):
        PreferenceQuery(
            days=5,
            budget="cheap",
            orientation="history",
            restaurant_prefs=["flavor"],
            cuisine="Italian",
            hotel_prefs=["quality"],
        )
    with pytest.raises(ValueError):
        PreferenceQuery(
            days=2,
            budget="cheap",
            orientation="history",
            restaurant_prefs=["flavor", "flavor"],
            cuisine="Italian",
            hotel_prefs=["quality"],
        )


def test_preferences_for_category():
    q = sample_query(11)
    kinds = {p.kind for p in q.preferences_for("restaurant")}
    assert kinds == {"budget", "cuisine", "restaurant"}
    assert {p.kind for p in q.preferences_for("attraction")} == {"budget", "orientation"}
    assert {p.kind for p in q.preferences_for("hotel")} == {"budget", "hotel"}


def test_generation_prompt_lists_preferences():
    q = sample_query(5)
    prompt = query_generation_prompt(q)
    assert f"{q.days} days, {q.budget} budget" in prompt
    assert f"{q.orientation} oriented" in prompt


def test_query_file_round_trip(tmp_path):
    queries = sample_queries(range(5))
    path = tmp_path / "queries.json"
    save_queries(queries, path, config_hash="abc")
    data = json.loads(path.read_text())
    assert all(record["config_hash"] == "abc" for record in data)
    assert load_queries(path) == queries


def test_load_queries_missing_file(tmp_path):
    with pytest.raises(InvalidInputError):
        load_queries(tmp_path / "none.json")


@pytest.mark.slow
def test_sampler_distribution_over_many_draws():
    n = 100_000
    restaurant_counts = Counter()
    hotel_counts = Counter()
    days = Counter()
    orientations = Counter()
    cuisines = Counter()
    for seed in range(n):
        q = sample_query(seed)
        restaurant_counts[len(q.restaurant_prefs)] += 1
        hotel_counts[len(q.hotel_prefs)] += 1
        days[q.days] += 1
        orientations[q.orientation] += 1
        cuisines[q.cuisine] += 1
        assert 6 <= q.preference_count() <= 10

    for counts in (restaurant_counts, hotel_counts):
        for size, weight in zip((1, 2, 3), (0.6, 0.3, 0.1)):
            assert abs(counts[size] / n - weight) <= 0.01
    for value in (2, 3, 4):
        assert abs(days[value] / n - 1 / 3) <= 0.01
    for value in ORIENTATIONS:
        assert abs(orientations[value] / n - 1 / len(ORIENTATIONS)) <= 0.01
    for value in CUISINES:
        assert abs(cuisines[value] / n - 1 / len(CUISINES)) <= 0.01


def test_option_lists():
    assert len(RESTAURANT_ATTRIBUTES) == 5
    assert len(HOTEL_ATTRIBUTES) == 4
    assert len(ORIENTATIONS) == 6
    assert len(CUISINES) == 14
