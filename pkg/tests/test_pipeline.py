import json
import zlib

import numpy as np
import pytest

from src.bean.ConfigModel import OverlapConfig
from src.bean.DomainModel import AnswerStrategy, EntailmentMatrix, validate_example
from src.bean.Errors import AnnotationFailure, BackendUnavailable
from src.bean.ProtocolModel import Handshake
from src.client.BackendClient import BaseBackendClient, ScriptedBackendClient
from src.client.BackendRegistry import BackendRegistry
from src.metric.pipeline import (answer_score_vector, max_support_score, record_violations, score_example,
                                 score_examples, zero_shot_entailment_score)
from tests.conftest import FIXTURES, heuristic_registry, run, scripted_pipeline, scripted_registry


# ==================== 固定示例 ====================

def test_knicks_example_scores_lerc_of_wrong_team(table1_example):
    report = run(score_example(table1_example, scripted_pipeline("table1"), scripted_registry("table1")))

    assert report.score == pytest.approx(0.2)
    assert (report.n_selected, report.n_scored, report.degenerate) == (1, 1, False)
    record = report.questions[0]
    assert record.question == "Who did the Knicks beat?"
    assert record.answer.text == "the Bucks"
    assert record.summ_answer == "the Bucks"
    assert record.summ_f1 == 1.0
    assert record.input_answer == "the Rockets"
    assert record.input_answerable and not record.penalty_applied
    assert record.overlap_scores["EM"] == 0.0
    assert record.overlap_scores["F1"] == 0.0
    assert record.overlap_scores["IS_ANSWERED_INPUT"] == 1.0
    assert record.overlap_scores["LERC"] == pytest.approx(0.2)


def test_knicks_example_primary_metric_em(table1_example):
    config = scripted_pipeline("table1", overlap=OverlapConfig(primary_metric="EM"))
    assert run(score_example(table1_example, config, scripted_registry("table1"))).score == 0.0


def test_knicks_example_zero_shot_entailment(table1_example):
    score = run(zero_shot_entailment_score(table1_example, scripted_registry("table1"), "table1"))
    assert score == pytest.approx(0.08)


def test_band_example_penalized_when_document_cannot_answer(table2_example):
    report = run(score_example(table2_example, scripted_pipeline("table2"), scripted_registry("table2")))
    assert report.score == 0.0
    record = report.questions[0]
    assert record.penalty_applied
    assert record.input_answer == "Twisted Sister"
    assert set(record.overlap_scores.values()) == {0.0}


def test_band_example_penalty_skips_lerc(table2_example):
    registry = scripted_registry("table2")
    run(score_example(table2_example, scripted_pipeline("table2"), registry))
    assert registry.client("table2").calls["overlap"] == 0


def test_band_example_without_penalty_uses_lerc(table2_example):
    config = scripted_pipeline("table2", answerability_penalty_enabled=False)
    report = run(score_example(table2_example, config, scripted_registry("table2")))
    assert report.score == pytest.approx(0.8)
    assert not report.questions[0].penalty_applied


def test_custom_penalty_value(table2_example):
    config = scripted_pipeline("table2", penalty_value=0.1)
    assert run(score_example(table2_example, config, scripted_registry("table2"))).score == pytest.approx(0.1)


# ==================== 过滤与退化 ====================

def test_unanswerable_summary_question_is_filtered(table1_example):
    config = scripted_pipeline("table1", answerability_threshold=0.96)
    report = run(score_example(table1_example, config, scripted_registry("table1")))
    assert report.questions[0].filtered
    assert report.degenerate
    assert report.score == config.degenerate_score
    assert report.n_scored == 0


def test_disabled_filter_keeps_question_and_penalizes(table1_example):
    config = scripted_pipeline("table1", answerability_threshold=0.96, summ_filter_enabled=False)
    report = run(score_example(table1_example, config, scripted_registry("table1")))
    record = report.questions[0]
    assert not record.filtered
    assert record.penalty_applied
    assert report.score == 0.0


def test_separate_answerability_backend(table1_example):
    judge = ScriptedBackendClient({"responses": {"answer": [{"response": {"answer": "", "answerable_prob": 0.1}}]}},
                                  backend_id="judge")
    table1 = ScriptedBackendClient.from_file(FIXTURES / "table1_backend.json", backend_id="table1")
    registry = BackendRegistry({"table1": table1, "judge": judge})
    config = scripted_pipeline("table1", answerability_backend_id="judge")
    report = run(score_example(table1_example, config, registry))
    assert report.questions[0].summ_answer == "the Bucks"
    assert report.questions[0].filtered
    assert report.degenerate


def test_empty_generation_is_dropped(table1_example):
    responses = {
        "annotate": [{"response": {"sentences": [{
            "text": "The Knicks beat the Bucks.", "char_offset": 0,
            "tokens": [["The", 0, 3, "DET"], ["Knicks", 4, 10, "PROPN"], ["beat", 11, 15, "VERB"],
                       ["the", 16, 19, "DET"], ["Bucks", 20, 25, "PROPN"], [".", 25, 26, "PUNCT"]],
            "np_chunks": [[16, 25]],
            "dep_heads": [1, 2, -1, 4, 2, 2],
            "dep_labels": ["det", "nsubj", "ROOT", "det", "obj", "punct"],
        }]}}],
        "generate_question": [{"response": {"question": ""}}],
    }
    registry = BackendRegistry({"s": ScriptedBackendClient({"responses": responses}, backend_id="s")})
    config = scripted_pipeline("s", summ_filter_enabled=False)
    report = run(score_example(table1_example, config, registry))
    assert report.questions[0].question == ""
    assert report.questions[0].filtered
    assert report.degenerate


def test_no_selected_answers_is_degenerate():
    empty = validate_example({"id": "e", "document": "Rain fell.", "summary": "Ran."})
    report = run(score_example(empty, scripted_pipeline("heuristic", degenerate_score=0.3), heuristic_registry()))
    assert report.n_selected == 0
    assert report.degenerate
    assert report.score == 0.3


# ==================== 错误处理 ====================

def test_backend_failure_names_example(table1_example):
    example = table1_example.model_copy(update={"id": "other", "summary": "Unscripted summary."})
    with pytest.raises(BackendUnavailable) as info:
        run(score_example(example, scripted_pipeline("table1"), scripted_registry("table1")))
    assert info.value.details["example_id"] == "other"


def test_annotation_failure_becomes_error_report(table1_example):
    bad = ScriptedBackendClient({"responses": {"annotate": [{"response": {"sentences": []}}]}}, backend_id="bad")
    registry = BackendRegistry({"bad": bad})
    config = scripted_pipeline("bad")
    with pytest.raises(AnnotationFailure):
        run(score_example(table1_example, config, registry))
    [report] = run(score_examples([table1_example], config, registry))
    assert report.error["error"] == "AnnotationFailure"
    assert report.degenerate


# ==================== 规则后端上的约束 ====================

def test_heuristic_corpus_traces_respect_filter_and_penalty(corpus_examples):
    config = scripted_pipeline("heuristic", answer_strategy=AnswerStrategy.ALL)
    reports = run(score_examples(corpus_examples, config, heuristic_registry()))
    assert [r.example_id for r in reports] == [e.id for e in corpus_examples]
    for report in reports:
        assert report.error is None
        assert 0.0 <= report.score <= 1.0
        assert report.n_scored == sum(not q.filtered for q in report.questions)
        assert report.n_selected == len(report.questions)
        for record in report.questions:
            assert record_violations(record, config) == []
            if record.filtered:
                assert record.overlap_scores == {}


def test_heuristic_scores_prefer_consistent_summaries(corpus_examples):
    config = scripted_pipeline("heuristic")
    reports = {r.example_id: r for r in run(score_examples(corpus_examples, config, heuristic_registry()))}
    assert reports["a1"].score > reports["a2"].score


def test_parallelism_does_not_change_reports(corpus_examples):
    serial = run(score_examples(corpus_examples, scripted_pipeline("heuristic", parallelism=1), heuristic_registry()))
    parallel = run(score_examples(corpus_examples, scripted_pipeline("heuristic", parallelism=8),
                                  heuristic_registry()))
    assert [r.model_dump() for r in serial] == [r.model_dump() for r in parallel]


def test_warm_cache_reproduces_reports(corpus_examples, tmp_path):
    config = scripted_pipeline("heuristic")
    cold = run(score_examples(corpus_examples, config, heuristic_registry(str(tmp_path))))
    warm_registry = heuristic_registry(str(tmp_path))
    warm = run(score_examples(corpus_examples, config, warm_registry))
    assert [r.model_dump() for r in cold] == [r.model_dump() for r in warm]
    assert warm_registry.client("heuristic").total_calls == 0


def test_answer_score_vector_matches_report(table1_example):
    vector = run(answer_score_vector(table1_example, scripted_pipeline("table1"), scripted_registry("table1")))
    assert vector == [pytest.approx(0.2)]


def test_max_support_score():
    matrix = EntailmentMatrix(values=[
        [(0.9, 0.05, 0.05), (0.1, 0.1, 0.8)],
        [(0.2, 0.2, 0.6), (0.3, 0.3, 0.4)],
    ])
    assert max_support_score(matrix) == pytest.approx((0.6 + 0.8) / 2)


def test_record_violations_detects_inconsistent_penalty(table2_example):
    config = scripted_pipeline("table2")
    report = run(score_example(table2_example, config, scripted_registry("table2")))
    tampered = report.questions[0].model_copy(update={"overlap_scores": {"LERC": 0.8}})
    assert record_violations(tampered, config) == ["惩罚生效时存在非惩罚值的重合度"]


# ==================== 随机轨迹 ====================

WORDS = ["Alice", "Paris", "Bob", "Rome", "Carol", "Berlin", "May", "June"]


class _RandomBackend(BaseBackendClient):
    """按种子生成标注与模型输出；同一请求体总是得到同一响应"""

    OPS = ["annotate", "generate_question", "answer", "overlap"]

    def __init__(self, seed):
        super().__init__("random")
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.summary_words = [str(w) for w in rng.choice(WORDS, size=int(rng.integers(1, 6)))]
        self.chunk_mask = rng.random(len(self.summary_words)) < 0.7
        document_words = [str(w) for w in rng.choice(WORDS, size=int(rng.integers(1, 6)))]
        self.summary = " ".join(self.summary_words) + "."
        self.document = " ".join(document_words) + "."

    def _rng(self, payload):
        key = zlib.crc32(json.dumps(payload, sort_keys=True).encode("utf-8"))
        return np.random.default_rng([self.seed, key])

    def _annotation(self):
        tokens, offset = [], 0
        for word in self.summary_words:
            tokens.append([word, offset, offset + len(word), "PROPN"])
            offset += len(word) + 1
        tokens.append([".", offset - 1, offset, "PUNCT"])
        chunks = [[start, end] for (_, start, end, _), keep in zip(tokens, self.chunk_mask) if keep]
        return {"sentences": [{
            "text": self.summary, "char_offset": 0, "tokens": tokens, "np_chunks": chunks,
            "dep_heads": [-1] + [0] * (len(tokens) - 1),
            "dep_labels": ["ROOT"] + ["dep"] * (len(tokens) - 1),
        }]}

    def _respond(self, op, payload):
        rng = self._rng({"op": op, **payload})
        if op == "annotate":
            return self._annotation()
        if op == "generate_question":
            if rng.random() < 0.1:
                return {"question": ""}
            return {"question": f"q|{payload['char_start']}|{payload['char_end']}"}
        if op == "answer":
            context = payload["context"]
            _, start, end = payload["question"].split("|")
            words = context.rstrip(".").split()
            options = [str(rng.choice(words)), ""]
            if context == self.summary:
                options.append(context[int(start):int(end)])
            return {"answer": options[int(rng.integers(len(options)))], "answerable_prob": float(rng.random())}
        return {"score": float(rng.uniform(1.0, 5.0))}

    async def _rpc(self, method, params):
        if method == "initialize":
            return Handshake(ops=self.OPS, backend_id=self.backend_id).model_dump()
        return {"content": self._respond(params["name"], params.get("arguments", {}))}


async def _random_reports(seed):
    client = _RandomBackend(seed)
    registry = BackendRegistry({"random": client})
    example = validate_example({"id": f"r{seed}", "document": client.document, "summary": client.summary})
    configs = {
        "both": scripted_pipeline("random"),
        "no_filter": scripted_pipeline("random", summ_filter_enabled=False),
        "no_penalty": scripted_pipeline("random", answerability_penalty_enabled=False),
    }
    reports = {name: await score_example(example, config, registry) for name, config in configs.items()}
    return configs, reports


@pytest.mark.parametrize("block", range(10))
def test_random_traces_respect_filter_and_penalty(block):
    async def check_block():
        for seed in range(block * 100, (block + 1) * 100):
            configs, reports = await _random_reports(seed)
            both, no_filter, no_penalty = reports["both"], reports["no_filter"], reports["no_penalty"]
            for name, report in reports.items():
                assert report.n_scored == sum(not r.filtered for r in report.questions)
                for record in report.questions:
                    assert record_violations(record, configs[name]) == [], (seed, name)

            for record in both.questions:
                if record.question:
                    summ_fails = not record.summ_answerable or record.summ_f1 < 0.6
                    assert record.filtered == summ_fails, seed

            # 关闭过滤只会多保留问题；关闭惩罚不改变保留集合，且得分不降
            assert no_filter.n_scored >= both.n_scored, seed
            assert no_penalty.n_scored == both.n_scored, seed
            if not both.degenerate:
                assert no_penalty.score >= both.score - 1e-12, seed

    run(check_block())
