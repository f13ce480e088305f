import json

import pytest
from pydantic import ValidationError

from src.bean.ConfigModel import OverlapConfig, PipelineConfig, RunConfig
from src.bean.DomainModel import (AnswerCandidate, AnswerStrategy, EntailmentMatrix, EvaluationExample, MetricReport,
                                  QAResult, SentenceAnnotation, validate_example)
from src.bean.Errors import ConfigError, ConflictingLabels, EmptyText, MissingField, QAFEError


def test_validate_example_accepts_minimal_record():
    example = validate_example({"id": 7, "document": "Doc.", "summary": "Sum."})
    assert example.id == "7"
    assert example.split == "test"
    assert example.label is None


@pytest.mark.parametrize("raw", [
    {"id": "a1", "document": "Alice visited Paris.", "summary": "Alice visited Paris."},
    {"id": 3, "dataset": "beta", "system": "s2", "doc_id": "d9", "document": "Ünïcode “quotes”\nand lines.",
     "summary": "Quotes.", "label": 0, "human_score": 1.5, "split": "valid"},
])
def test_example_survives_serialization(raw):
    example = validate_example(raw)
    assert EvaluationExample.model_validate_json(example.model_dump_json()) == example
    assert validate_example(json.loads(example.model_dump_json())) == example


def test_validate_example_missing_summary():
    with pytest.raises(MissingField) as info:
        validate_example({"id": "x", "document": "Doc."})
    assert info.value.details["fields"] == ["summary"]


def test_validate_example_empty_document():
    with pytest.raises(EmptyText):
        validate_example({"id": "x", "document": "   ", "summary": "Sum."})


@pytest.mark.parametrize("label", [2, -1, True, 0.5])
def test_validate_example_non_binary_label(label):
    with pytest.raises(ConflictingLabels):
        validate_example({"id": "x", "document": "Doc.", "summary": "Sum.", "label": label})


def test_validate_example_requires_judgment_for_benchmark():
    with pytest.raises(MissingField):
        validate_example({"id": "x", "document": "Doc.", "summary": "Sum."}, require_label=True)
    assert validate_example({"id": "x", "document": "D.", "summary": "S.", "human_score": 3.0},
                            require_label=True).human_score == 3.0


def test_errors_carry_stable_codes():
    error = MissingField("缺少字段", record_id="x")
    assert isinstance(error, QAFEError)
    assert error.to_dict() == {"error": "MissingField", "message": "缺少字段", "details": {"record_id": "x"}}


def test_answer_candidate_span_must_match_text():
    AnswerCandidate(text="Bucks", char_start=20, char_end=25, sentence_index=0, strategy=AnswerStrategy.NER)
    with pytest.raises(ValidationError):
        AnswerCandidate(text="Bucks", char_start=20, char_end=24, sentence_index=0, strategy="NER")
    with pytest.raises(ValidationError):
        AnswerCandidate(text="", char_start=3, char_end=3, sentence_index=0, strategy="NER")


def _sentence(**overrides):
    data = {
        "text": "Hi there.",
        "char_offset": 10,
        "tokens": [["Hi", 10, 12, "INTJ"], ["there", 13, 18, "ADV"], [".", 18, 19, "PUNCT"]],
        "dep_heads": [-1, 0, 0],
        "dep_labels": ["ROOT", "advmod", "punct"],
    }
    data.update(overrides)
    return SentenceAnnotation.model_validate(data)


def test_sentence_annotation_valid():
    sentence = _sentence(np_chunks=[[13, 18]])
    assert sentence.tokens[1].pos_tag == "ADV"


@pytest.mark.parametrize("overrides", [
    {"dep_heads": [-1, -1, 0]},
    {"dep_heads": [1, 0, 0]},
    {"dep_heads": [-1, 0, 5]},
    {"dep_labels": ["ROOT"]},
    {"np_chunks": [[0, 5]]},
    {"entities": [[18, 25, "LOC"]]},
])
def test_sentence_annotation_rejects_malformed(overrides):
    with pytest.raises(ValidationError):
        _sentence(**overrides)


def test_qa_result_threshold():
    assert QAResult.from_prob("x", 0.5, 0.5).is_answerable
    assert not QAResult.from_prob("x", 0.49, 0.5).is_answerable


def test_metric_report_counts():
    with pytest.raises(ValidationError):
        MetricReport(example_id="x", score=0.5, n_selected=1, n_scored=2)


def test_entailment_matrix_checks_probabilities():
    matrix = EntailmentMatrix(values=[[(0.1, 0.2, 0.7), (0.3, 0.3, 0.4)]])
    assert matrix.shape == (1, 2)
    assert matrix.entailment_column(1) == [0.4]
    with pytest.raises(ValidationError):
        EntailmentMatrix(values=[[(0.5, 0.5, 0.5)]])
    with pytest.raises(ValidationError):
        EntailmentMatrix(values=[])


def test_overlap_config_primary_metric_must_be_computed():
    with pytest.raises(ValidationError):
        OverlapConfig(metrics=["EM", "F1"], primary_metric="LERC")


def test_degenerate_score_must_lie_in_scale():
    with pytest.raises(ValidationError):
        PipelineConfig(degenerate_score=2.0)
    raw = PipelineConfig(overlap=OverlapConfig(lerc_rescale=False), degenerate_score=3.0)
    assert raw.overlap.scale == (1.0, 5.0)


def test_run_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{"pipeline": {"answer_strategy": "NER", "bogus": 1}}', encoding="utf-8")
    with pytest.raises(ConfigError):
        RunConfig.load(str(path))


def test_run_config_overrides_and_backends(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{"seed": 3, "backends": {"remote": "http://localhost:9"}}', encoding="utf-8")
    config = RunConfig.load(str(path), {"seed": 5, "backends": {"extra": "heuristic"}, "parallelism": None})
    assert config.seed == 5
    assert config.backends == {"remote": "http://localhost:9", "extra": "heuristic"}


def test_digest_ignores_execution_resources():
    base = RunConfig()
    assert base.digest() == RunConfig(parallelism=8, cache_dir="/tmp/x").digest()
    assert base.digest() != RunConfig(seed=1).digest()
    assert RunConfig(parallelism=4).resolved_pipeline().parallelism == 4


def test_negative_seeds_are_rejected(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(None, {"seed": -1})
    path = tmp_path / "config.json"
    path.write_text('{"combiner": {"training": {"seed": -3}}}', encoding="utf-8")
    with pytest.raises(ConfigError):
        RunConfig.load(str(path))
