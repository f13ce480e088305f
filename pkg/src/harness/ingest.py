"""
JSONL 读写与评测数据装载。

所有输出文件先写临时文件再原子重命名；同一输入重复运行得到逐字节相同的文件。
"""
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

from pydantic import ValidationError

from ..bean.DomainModel import EvaluationExample, validate_example
from ..bean.Errors import ConfigError, ConflictingLabels, MisalignedInputs, MissingField
from ..bean.HarnessModel import Judgment, ScoredExample, ScoreRecord

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    """逐行解析，跳过空行；行号写入错误信息"""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"无法读取文件 {path}: {e}") from e
    records = []
    for number, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{number} 不是合法 JSON: {e}") from e
        if not isinstance(record, dict):
            raise ConfigError(f"{path}:{number} 不是 JSON 对象")
        records.append(record)
    return records


def dumps_line(record: Dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def write_text_atomic(path: PathLike, text: str) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> None:
    write_text_atomic(path, "".join(dumps_line(r) + "\n" for r in records))


def write_json(path: PathLike, value: Any) -> None:
    write_text_atomic(path, json.dumps(value, ensure_ascii=False, indent=2) + "\n")


# ==================== 样本 ====================

def load_examples(path: PathLike, require_label: bool = False) -> List[EvaluationExample]:
    """读取单个 JSONL 文件，或目录下按文件名排序的全部 *.jsonl"""
    source = Path(path)
    files = sorted(source.glob("*.jsonl")) if source.is_dir() else [source]
    if source.is_dir() and not files:
        raise ConfigError(f"目录中没有 .jsonl 文件: {source}")
    examples = []
    for file in files:
        examples.extend(validate_example(raw, require_label=require_label) for raw in read_jsonl(file))
    _check_unique(e.id for e in examples)
    logger.info(f"已读取 {len(examples)} 条样本: {source}")
    return examples


def _check_unique(ids: Iterable[str]) -> None:
    seen = set()
    for record_id in ids:
        if record_id in seen:
            raise ConflictingLabels(f"记录 id 重复: {record_id}", record_id=record_id)
        seen.add(record_id)


# ==================== 分数与人工标注 ====================

def _parse(model, raw: Dict[str, Any], path: PathLike):
    try:
        return model.model_validate({**raw, "id": str(raw.get("id"))} if "id" in raw else raw)
    except ValidationError as e:
        raise MissingField(f"{path}: 记录格式错误 {raw.get('id')}: {e.errors()[0]['msg']}",
                           record_id=raw.get("id")) from e


def load_scores(path: PathLike, higher_is_consistent: bool = True) -> Dict[str, ScoreRecord]:
    """读取分数文件；极性相反的指标在读入时取负"""
    scores: Dict[str, ScoreRecord] = {}
    for raw in read_jsonl(path):
        record = _parse(ScoreRecord, raw, path)
        if record.id in scores:
            raise ConflictingLabels(f"{path}: 分数 id 重复: {record.id}", record_id=record.id)
        if not higher_is_consistent:
            record = record.model_copy(update={"score": -record.score})
        scores[record.id] = record
    return scores


def load_judgments(path: PathLike) -> Dict[str, Judgment]:
    judgments: Dict[str, Judgment] = {}
    for raw in read_jsonl(path):
        label = raw.get("label")
        if label is not None and (isinstance(label, bool) or label not in (0, 1)):
            raise ConflictingLabels(f"{path}: label 不是二值: {label!r}", record_id=raw.get("id"))
        judgment = _parse(Judgment, raw, path)
        if judgment.label is None and judgment.human_score is None:
            raise MissingField(f"{path}: {judgment.id} 缺少 label 与 human_score", record_id=judgment.id)
        if judgment.id in judgments:
            raise ConflictingLabels(f"{path}: 标注 id 重复: {judgment.id}", record_id=judgment.id)
        judgments[judgment.id] = judgment
    return judgments


def join_examples(examples: Sequence[EvaluationExample], scores: Dict[str, ScoreRecord]) -> List[ScoredExample]:
    """样本与分数按 id 对齐，分数缺失即报错"""
    missing = [e.id for e in examples if e.id not in scores]
    if missing:
        raise MisalignedInputs(f"{len(missing)} 条样本没有分数，例如 {missing[:3]}", missing=missing[:10])
    return [
        ScoredExample(example_id=e.id, dataset=e.dataset, system=e.system, doc_id=e.doc_id, split=e.split,
                      metric_score=scores[e.id].score, label=e.label, human_score=e.human_score)
        for e in examples
    ]


def join_judgments(scores: Dict[str, ScoreRecord], judgments: Dict[str, Judgment],
                   split: Optional[str] = None) -> List[ScoredExample]:
    """分数文件与标注文件按 id 对齐；两侧 id 集合必须一致"""
    if set(scores) != set(judgments):
        only_scores = sorted(set(scores) - set(judgments))
        only_judgments = sorted(set(judgments) - set(scores))
        raise MisalignedInputs(f"分数与标注的 id 不一致: 仅分数 {only_scores[:3]}，仅标注 {only_judgments[:3]}")
    return [
        ScoredExample(example_id=record.id, dataset=record.dataset, system=record.system, doc_id=record.doc_id,
                      split=split or "test", metric_score=record.score,
                      label=judgments[record.id].label, human_score=judgments[record.id].human_score)
        for record in scores.values()
    ]
