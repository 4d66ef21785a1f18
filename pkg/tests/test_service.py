import pytest
from fastapi.testclient import TestClient

from conftest import make_query

from itinbench import service
from itinbench.settings import RunConfig


@pytest.fixture
def client():
    service.state.pool = None
    service.state.run_config = RunConfig()
    with TestClient(service.app) as test_client:
        yield test_client
    service.state.pool = None


@pytest.fixture
def loaded(client, city_pool):
    service.configure(pool=city_pool)
    return client


def test_health_reports_pool_state(client, city_pool):
    assert client.get("/api/health").json() == {"status": "ok", "pool_loaded": False}
    service.configure(pool=city_pool)
    assert client.get("/api/health").json()["pool_loaded"] is True


def test_pool_requires_a_loaded_pool(client):
    assert client.get("/api/pool").status_code == 404


def test_pool_counts(loaded, city_pool):
    data = loaded.get("/api/pool").json()
    assert data["city"] == "Philadelphia"
    assert data["counts"] == city_pool.counts()


def test_sample_queries(client):
    response = client.post("/api/queries/sample", json={"seeds": "0-2"})
    assert response.status_code == 200
    assert [q["id"] for q in response.json()["queries"]] == ["q0000", "q0001", "q0002"]


def test_sample_rejects_bad_seed_range(client):
    assert client.post("/api/queries/sample", json={"seeds": "9-0"}).status_code == 400


def test_solve_returns_a_plan_document(loaded):
    q = make_query()
    response = loaded.post("/api/solve", json={"query": q.model_dump(), "solver": "greedy"})
    assert response.status_code == 200
    data = response.json()
    assert data["source"] == "greedy"
    assert data["query_ref"] == q.id
    assert len(data["days"]) == q.days


def test_evaluate_scores_solved_plans(loaded):
    q = make_query()
    plan = loaded.post("/api/solve", json={"query": q.model_dump()}).json()["days"]
    response = loaded.post("/api/evaluate", json={"plans": [{"plan": plan, "query": q.model_dump()}]})
    assert response.status_code == 200
    table = response.json()["table"]
    assert table["OOP"] == "0.0"
    assert table["MI"] == "0.0"
    assert table["Micro"] == "100.0"


def test_evaluate_rejects_unparseable_plans(loaded):
    q = make_query()
    response = loaded.post("/api/evaluate", json={"plans": [{"plan": "not a plan", "query": q.model_dump()}]})
    assert response.status_code == 422


def test_evaluate_empty_batch_renders_undefined_cells(loaded):
    response = loaded.post("/api/evaluate", json={"plans": []})
    assert response.status_code == 200
    assert set(response.json()["table"].values()) == {"-"}
