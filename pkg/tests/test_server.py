import io
import json
import sys
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from src.client.BackendClient import StdioBackendClient
from src.client.BackendRegistry import BackendRegistry
from src.server import BackendServer, app, serve_stdio
from tests.conftest import run

SERVER_SCRIPT = Path(__file__).resolve().parent.parent / "src" / "server.py"
SUMMARY = "The band will perform two shows."


@pytest.fixture
def client():
    with TestClient(app) as test_client:
        yield test_client


def _rpc(method, params=None, request_id=1):
    return {"jsonrpc": "2.0", "id": request_id, "method": method, "params": params or {}}


# ==================== HTTP ====================

def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "healthy"
    assert body["tools_loaded"] == 5


def test_list_tools(client):
    names = {tool["name"] for tool in client.get("/tools").json()}
    assert names == {"annotate", "generate_question", "answer", "entail", "overlap"}


def test_tool_definition(client):
    definition = client.get("/tools/overlap/definition").json()
    assert definition["required"] == ["question", "context", "reference", "candidate"]
    missing = client.get("/tools/nope/definition")
    assert missing.status_code == 404
    assert missing.json()["details"] == {"path": "/tools/nope/definition"}


def test_direct_tool_call(client):
    response = client.post("/tools/overlap", json={"arguments": {
        "question": "Q", "context": "C", "reference": "the band", "candidate": "The band",
    }})
    assert response.status_code == 200
    assert response.json() == {"content": {"score": 5.0}}


def test_direct_tool_call_missing_argument(client):
    response = client.post("/tools/answer", json={"arguments": {"question": "Q"}})
    assert response.status_code == 422


def test_json_rpc_initialize(client):
    reply = client.post("/", json=_rpc("initialize")).json()
    assert reply["result"]["protocol"] == "qafe/1"
    assert reply["result"]["backend_id"]
    assert reply["id"] == 1


def test_json_rpc_tools_call(client):
    reply = client.post("/", json=_rpc("tools/call", {
        "name": "entail", "arguments": {"premise": SUMMARY, "hypothesis": SUMMARY},
    })).json()
    content = reply["result"]["content"]
    assert sum(content.values()) == pytest.approx(1.0)


def test_json_rpc_parse_error(client):
    reply = client.post("/", content=b"{not json").json()
    assert reply["error"]["code"] == -32700


def test_json_rpc_notification_has_no_body(client):
    response = client.post("/", json={"jsonrpc": "2.0", "method": "notifications/initialized"})
    assert response.status_code == 204


# ==================== 消息分发 ====================

def test_dispatch_unknown_method():
    reply = run(BackendServer(backend_id="t").dispatch(_rpc("resources/list")))
    assert reply["error"]["code"] == -32601


def test_dispatch_unknown_tool_is_precondition_violation():
    reply = run(BackendServer(backend_id="t").dispatch(_rpc("tools/call", {"name": "paint", "arguments": {}})))
    assert reply["error"]["code"] == -32602
    assert reply["error"]["data"]["error"] == "PreconditionViolation"


def test_dispatch_invalid_arguments():
    reply = run(BackendServer(backend_id="t").dispatch(_rpc("tools/call", {
        "name": "answer", "arguments": {"question": "Q", "context": "C", "extra": True},
    })))
    assert reply["error"]["data"]["error"] == "InvalidParams"


def test_serialized_flag_in_handshake():
    assert BackendServer(backend_id="t", serialized=True).handshake().serialized


# ==================== stdio ====================

def test_serve_stdio_answers_line_by_line():
    reader = io.StringIO("\n".join([
        json.dumps(_rpc("initialize", request_id=1)),
        "",
        "garbage",
        json.dumps({"jsonrpc": "2.0", "method": "notifications/initialized"}),
        json.dumps(_rpc("tools/call", {"name": "annotate", "arguments": {"text": SUMMARY}}, request_id=2)),
    ]) + "\n")
    writer = io.StringIO()
    run(serve_stdio(BackendServer(backend_id="t"), reader, writer))

    replies = [json.loads(line) for line in writer.getvalue().splitlines()]
    assert [r.get("id") for r in replies] == [1, None, 2]
    assert replies[1]["error"]["code"] == -32700
    assert replies[2]["result"]["content"]["sentences"][0]["text"] == SUMMARY


def test_stdio_subprocess_backend():
    async def scenario():
        client = StdioBackendClient("proc", [sys.executable, str(SERVER_SCRIPT), "--stdio"])
        registry = BackendRegistry({"proc": client})
        try:
            handshake = await client.handshake()
            result = await registry.answer_question("proc", "what : <mask> will perform two shows ?", SUMMARY)
        finally:
            await registry.aclose()
        return handshake, result

    handshake, result = run(scenario())
    assert handshake.protocol == "qafe/1"
    assert result.answer_text == "The band"
