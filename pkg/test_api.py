import pytest
from fastapi.testclient import TestClient

from app.main import app


@pytest.fixture
def client():
    with TestClient(app) as test_client:
        yield test_client


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


def test_root(client):
    assert client.get("/").json()["status"] == "running"


def test_metrics(client):
    client.get("/health")
    response = client.get("/metrics")
    assert response.status_code == 200
    assert "http_requests_total" in response.text


def test_normalize(client):
    response = client.post("/api/v1/normalize", json={"expr": "z2*z1", "n": 2})
    assert response.status_code == 200
    assert response.json()["normal_form"] == "q*z1*z2"


def test_normalize_syntax_error(client):
    response = client.post("/api/v1/normalize", json={"expr": "z1 +* z2", "n": 2})
    assert response.status_code == 400
    body = response.json()
    assert body["success"] is False
    assert body["error_code"] == "EXPRESSION_SYNTAX"


def test_request_validation(client):
    response = client.post("/api/v1/normalize", json={"expr": "z1", "n": 0})
    assert response.status_code == 422
    assert response.json()["error_code"] == "VALIDATION_ERROR"


def test_identity(client):
    response = client.post("/api/v1/identity", json={"lhs": "z1*z1#", "rhs": "q^2*z1#*z1", "n": 1})
    assert response.json() == {"holds": True, "residual": "0"}


def test_confluence(client):
    response = client.post("/api/v1/confluence", json={"n": 1, "max_len": 3})
    assert response.status_code == 200
    assert response.json()["confluent"] is True


def test_verify(client):
    payload = {"n": 1, "N": 4, "M": 4, "d": 1, "samples": [0.9, 1.0], "suites": ["relations", "spectrum"]}
    response = client.post("/api/v1/verify", json=payload)
    assert response.status_code == 200
    body = response.json()
    assert body["passed"] is True
    assert all(record["schema"] == "qplane.report/1" for record in body["records"])


def test_verify_rejects_an_empty_interior(client):
    response = client.post("/api/v1/verify", json={"n": 1, "N": 4, "M": 4, "d": 4})
    assert response.status_code == 422
    assert response.json()["error_code"] == "VALIDATION_ERROR"


def test_verify_rejects_q_outside_the_unit_interval(client):
    response = client.post("/api/v1/verify", json={"q": "3/2"})
    assert response.status_code == 422
