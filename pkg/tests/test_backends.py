import asyncio
import json

import httpx
import pytest
from pydantic import ValidationError

from src.bean.DomainModel import AnswerCandidate
from src.bean.Errors import (BackendUnavailable, ConfigError, EmptyGeneration, MalformedAnnotation,
                             PreconditionViolation)
from src.bean.ProtocolModel import BackendRequest
from src.client.BackendClient import (HttpBackendClient, LocalBackendClient, ScriptedBackendClient,
                                      StdioBackendClient, create_client)
from src.client.BackendRegistry import BackendRegistry
from src.client.InferenceCache import InferenceCache, request_key
from src.server import BackendServer
from src.tools.EntailmentTool import overlap_entailment
from src.tools.QuestionAnsweringTool import QuestionAnsweringTool
from src.tools.QuestionGenerationTool import QuestionGenerationTool, cloze_question
from tests.conftest import FIXTURES, heuristic_registry, run, scripted_registry

SUMMARY = "The band will perform two shows."
DOCUMENT = "Twisted Sister will play two concerts this summer."


# ==================== 规则后端 ====================

def test_cloze_question_masks_answer_within_sentence():
    assert cloze_question("The band", 0, 8, SUMMARY) == "what : <mask> will perform two shows ?"
    assert cloze_question("two shows", 22, 31, SUMMARY) == "what : The band will perform <mask> ?"
    two = "First one. The band will perform two shows."
    assert cloze_question("two shows", 33, 42, two) == "what : The band will perform <mask> ?"


def test_cloze_question_rejects_misplaced_answer():
    with pytest.raises(PreconditionViolation):
        cloze_question("band", 0, 4, SUMMARY)


def test_heuristic_qa_recovers_masked_span():
    tool = QuestionAnsweringTool()
    question = "what : <mask> will perform two shows ?"
    on_summary = run(tool({"question": question, "context": SUMMARY}))
    assert on_summary == {"answer": "The band", "answerable_prob": 1.0}
    on_document = run(tool({"question": question, "context": DOCUMENT}))
    assert on_document["answer"] == "Twisted Sister"
    assert on_document["answerable_prob"] == pytest.approx(0.25)


def test_heuristic_qa_free_form_question():
    tool = QuestionAnsweringTool()
    result = run(tool({"question": "Who will perform two shows?", "context": SUMMARY}))
    assert result["answer"] == "The band"
    assert 0.0 < result["answerable_prob"] <= 1.0


def test_heuristic_entailment_is_a_distribution():
    same = overlap_entailment("The band played.", "The band played.")
    other = overlap_entailment("The band played.", "Rain fell in Paris.")
    for triple in (same, other):
        assert sum(triple.values()) == pytest.approx(1.0)
    assert same["entailment"] > other["entailment"]
    assert other["contradiction"] > same["contradiction"]


def test_tool_rejects_unknown_payload_keys():
    with pytest.raises(ValidationError):
        run(QuestionGenerationTool()({"answer": "x", "char_start": 0, "char_end": 1, "context": "x", "extra": 1}))


# ==================== 客户端 ====================

def test_local_client_handshake_and_counts():
    client = LocalBackendClient("heuristic")
    handshake = run(client.handshake())
    assert handshake.protocol == "qafe/1"
    assert set(handshake.ops) == {"annotate", "generate_question", "answer", "entail", "overlap"}
    assert not handshake.serialized
    run(client.request("annotate", {"text": SUMMARY}))
    assert client.calls["annotate"] == 1


def test_scripted_client_serialized_handshake_installs_lock():
    client = ScriptedBackendClient.from_file(FIXTURES / "table2_backend.json")
    assert run(client.handshake()).serialized
    assert client._lock is not None


class _SlowSerializedClient(ScriptedBackendClient):
    """握手较慢的串行后端，记录同时进行的 tools/call 数量"""

    def __init__(self):
        super().__init__({"serialized": True, "responses": {"answer": [
            {"response": {"answer": "two shows", "answerable_prob": 0.9}}]}}, backend_id="slow")
        self.active = self.peak = self.handshakes = 0

    async def _rpc(self, method, params):
        if method == "initialize":
            self.handshakes += 1
            await asyncio.sleep(0.01)
            return await super()._rpc(method, params)
        self.active += 1
        self.peak = max(self.peak, self.active)
        await asyncio.sleep(0.005)
        self.active -= 1
        return await super()._rpc(method, params)


def test_concurrent_first_requests_share_one_handshake_and_lock():
    client = _SlowSerializedClient()

    async def burst():
        payload = {"question": "What?", "context": SUMMARY}
        return await asyncio.gather(*(client.request("answer", payload) for _ in range(6)))

    results = run(burst())
    assert len(results) == 6
    assert client.handshakes == 1
    assert client.peak == 1


def test_scripted_client_miss_is_backend_unavailable():
    registry = scripted_registry("table1")
    with pytest.raises(BackendUnavailable):
        run(registry.answer_question("table1", "Unknown question?", SUMMARY))


def test_scripted_client_rejects_unsupported_op():
    registry = scripted_registry("table2")
    with pytest.raises(BackendUnavailable) as info:
        run(registry.entail("table2", "A.", "B."))
    assert info.value.details["op"] == "entail"


def _mock_http_client(server):
    async def handler(request: httpx.Request) -> httpx.Response:
        reply = await server.dispatch(json.loads(request.content))
        return httpx.Response(200, json=reply)

    return HttpBackendClient("remote", "http://backend.test", transport=httpx.MockTransport(handler))


def test_http_client_speaks_json_rpc():
    client = _mock_http_client(BackendServer(backend_id="remote"))
    registry = BackendRegistry({"remote": client})
    result = run(registry.answer_question("remote", "what : <mask> will perform two shows ?", SUMMARY))
    assert result.answer_text == "The band"
    assert result.is_answerable


def test_http_client_maps_connection_errors():
    def refuse(request):
        raise httpx.ConnectError("connection refused", request=request)

    client = HttpBackendClient("remote", "http://backend.test", transport=httpx.MockTransport(refuse))
    with pytest.raises(BackendUnavailable):
        run(client.handshake())


def test_http_client_passes_through_precondition_errors():
    client = _mock_http_client(BackendServer(backend_id="remote"))
    with pytest.raises(PreconditionViolation):
        run(client.request("generate_question", {"answer": "band", "char_start": 0, "char_end": 4,
                                                 "context": SUMMARY}))


def test_stdio_client_reports_missing_executable():
    client = StdioBackendClient("proc", ["/nonexistent/qafe-backend"])
    with pytest.raises(BackendUnavailable):
        run(client.handshake())


@pytest.mark.parametrize("endpoint, expected", [
    ("heuristic", LocalBackendClient),
    ("http://localhost:8000", HttpBackendClient),
    ("stdio:python -m src.server --stdio", StdioBackendClient),
    (f"scripted:{FIXTURES / 'table1_backend.json'}", ScriptedBackendClient),
])
def test_create_client_by_endpoint(endpoint, expected):
    assert isinstance(create_client("x", endpoint), expected)


def test_create_client_rejects_unknown_endpoint():
    with pytest.raises(ConfigError):
        create_client("x", "ftp://nowhere")


# ==================== 注册表校验 ====================

def _registry(responses, backend_id="s"):
    return BackendRegistry({backend_id: ScriptedBackendClient({"responses": responses}, backend_id=backend_id)})


def test_registry_unknown_backend_is_config_error():
    with pytest.raises(ConfigError):
        run(heuristic_registry().annotate("missing", SUMMARY))


def test_registry_rejects_entailment_not_summing_to_one():
    registry = _registry({"entail": [{"response": {"contradiction": 0.5, "neutral": 0.5, "entailment": 0.5}}]})
    with pytest.raises(MalformedAnnotation):
        run(registry.entail("s", "A.", "B."))


def test_registry_rejects_out_of_range_lerc():
    registry = _registry({"overlap": [{"response": {"score": 7.0}}]})
    with pytest.raises(BackendUnavailable):
        run(registry.lerc_overlap("s", "Q?", "C.", "a", "b"))


def test_registry_rejects_out_of_range_answerable_prob():
    registry = _registry({"answer": [{"response": {"answer": "x", "answerable_prob": 1.5}}]})
    with pytest.raises(BackendUnavailable):
        run(registry.answer_question("s", "Q?", "C."))


def test_registry_rejects_answerable_span_outside_context():
    context = "The Knicks beat the Rockets."
    registry = _registry({"answer": [{"response": {"answer": "the Lakers", "answerable_prob": 0.99}}]})
    with pytest.raises(MalformedAnnotation) as info:
        run(registry.answer_question("s", "Who did the Knicks beat?", context))
    assert info.value.details["op"] == "answer"


def test_registry_accepts_unanswerable_span_outside_context():
    registry = _registry({"answer": [{"response": {"answer": "the Lakers", "answerable_prob": 0.2}}]})
    result = run(registry.answer_question("s", "Who did the Knicks beat?", "The Knicks beat the Rockets."))
    assert not result.is_answerable


def test_registry_empty_question_is_empty_generation():
    registry = _registry({"generate_question": [{"response": {"question": "   "}}]})
    answer = AnswerCandidate(text="The band", char_start=0, char_end=8, sentence_index=0, strategy="NP_CHUNKS")
    with pytest.raises(EmptyGeneration):
        run(registry.generate_question("s", answer, SUMMARY))


def test_registry_checks_answer_offsets_before_calling():
    registry = heuristic_registry()
    answer = AnswerCandidate(text="band", char_start=0, char_end=4, sentence_index=0, strategy="NP_CHUNKS")
    with pytest.raises(PreconditionViolation):
        run(registry.generate_question("heuristic", answer, SUMMARY))
    assert registry.client("heuristic").total_calls == 0


def test_registry_rejects_empty_question_or_context():
    with pytest.raises(PreconditionViolation):
        run(heuristic_registry().answer_question("heuristic", " ", SUMMARY))
    with pytest.raises(PreconditionViolation):
        run(heuristic_registry().entail("heuristic", SUMMARY, ""))


# ==================== 推理缓存 ====================

def test_cache_serves_repeated_requests(tmp_path):
    registry = heuristic_registry(cache_dir=str(tmp_path))
    first = run(registry.answer_question("heuristic", "what : <mask> will perform two shows ?", DOCUMENT))
    second = run(registry.answer_question("heuristic", "what : <mask> will perform two shows ?", DOCUMENT))
    assert first == second
    assert registry.client("heuristic").calls["answer"] == 1
    assert registry.cache.hits == 1


def test_cache_is_shared_across_registries(tmp_path):
    run(heuristic_registry(cache_dir=str(tmp_path)).annotate("heuristic", SUMMARY))
    warm = heuristic_registry(cache_dir=str(tmp_path))
    run(warm.annotate("heuristic", SUMMARY))
    assert warm.client("heuristic").total_calls == 0


def test_cache_key_depends_on_backend_and_payload():
    a = BackendRequest(op="annotate", payload={"text": "x"}, backend_id="a")
    b = BackendRequest(op="annotate", payload={"text": "x"}, backend_id="b")
    c = BackendRequest(op="annotate", payload={"text": "y"}, backend_id="a")
    assert len({request_key(a), request_key(b), request_key(c)}) == 3


def test_cache_quarantines_corrupted_entry(tmp_path):
    cache = InferenceCache(str(tmp_path))
    request = BackendRequest(op="annotate", payload={"text": "x"}, backend_id="a")
    cache.put(request, {"sentences": []})
    path = cache.path_for(request_key(request))
    path.write_text('{"key": "tampered"}', encoding="utf-8")

    assert cache.get(request) is None
    assert cache.quarantined == 1
    assert path.with_suffix(".corrupt").exists()
    assert not path.exists()


def test_cache_recomputes_after_quarantine(tmp_path):
    registry = heuristic_registry(cache_dir=str(tmp_path))
    run(registry.annotate("heuristic", SUMMARY))
    request = BackendRequest(op="annotate", payload={"text": SUMMARY}, backend_id="heuristic")
    registry.cache.path_for(request_key(request)).write_text("not json", encoding="utf-8")
    run(registry.annotate("heuristic", SUMMARY))
    assert registry.client("heuristic").calls["annotate"] == 2
    assert registry.cache.get(request) is not None
