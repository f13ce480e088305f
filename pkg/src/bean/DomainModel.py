import math
from enum import Enum
from typing import List, Any, Optional, Dict, Literal, NamedTuple, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .Errors import MissingField, EmptyText, ConflictingLabels

# ==================== 评测样本 ====================


class EvaluationExample(BaseModel):
    """一条 (文档, 摘要, 标签) 记录"""
    model_config = ConfigDict(frozen=True)

    id: str
    dataset: str = ""
    system: str = ""
    doc_id: Optional[str] = None
    document: str
    summary: str
    label: Optional[int] = None
    human_score: Optional[float] = None
    split: Literal["valid", "test"] = "test"

    @field_validator("document", "summary")
    @classmethod
    def _non_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("文本为空")
        return value

    @field_validator("label")
    @classmethod
    def _binary(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value not in (0, 1):
            raise ValueError("label 必须为 0 或 1")
        return value


_REQUIRED_FIELDS = ("id", "document", "summary")


def validate_example(raw: Dict[str, Any], require_label: bool = False) -> EvaluationExample:
    """校验原始记录，返回 EvaluationExample 或抛出结构化错误"""
    missing = [name for name in _REQUIRED_FIELDS if raw.get(name) is None]
    if missing:
        raise MissingField(f"缺少必需字段: {', '.join(missing)}", record_id=raw.get("id"), fields=missing)

    for name in ("document", "summary"):
        if not isinstance(raw[name], str) or not raw[name].strip():
            raise EmptyText(f"{name} 为空", record_id=raw.get("id"), field=name)

    label = raw.get("label")
    if label is not None:
        if isinstance(label, bool) or label not in (0, 1):
            raise ConflictingLabels(f"label 不是二值: {label!r}", record_id=raw.get("id"))
        label = int(label)

    if require_label and label is None and raw.get("human_score") is None:
        raise MissingField("label 与 human_score 均缺失", record_id=raw.get("id"), fields=["label", "human_score"])

    try:
        return EvaluationExample.model_validate({**raw, "id": str(raw["id"]), "label": label})
    except ValidationError as e:
        raise MissingField(f"记录格式错误: {e.errors()[0]['msg']}", record_id=raw.get("id")) from e


# ==================== 答案选择 ====================


class AnswerStrategy(str, Enum):
    NER = "NER"
    NP_CHUNKS = "NP_CHUNKS"
    MAX_NP = "MAX_NP"
    ALL = "ALL"


class AnswerCandidate(BaseModel):
    """从摘要中选出的待提问片段"""
    model_config = ConfigDict(frozen=True)

    text: str
    char_start: int = Field(ge=0)
    char_end: int
    sentence_index: int = Field(ge=0)
    strategy: AnswerStrategy

    @model_validator(mode="after")
    def _ordered(self):
        if self.char_start >= self.char_end:
            raise ValueError("char_start 必须小于 char_end")
        if len(self.text) != self.char_end - self.char_start:
            raise ValueError("text 长度与偏移不一致")
        return self


class Token(NamedTuple):
    text: str
    char_start: int
    char_end: int
    pos_tag: str


class EntitySpan(NamedTuple):
    char_start: int
    char_end: int
    entity_type: str


class SentenceAnnotation(BaseModel):
    """单句标注；所有偏移均为在原文中的绝对偏移"""
    model_config = ConfigDict(frozen=True)

    text: str
    char_offset: int = Field(ge=0)
    tokens: List[Token]
    entities: List[EntitySpan] = []
    np_chunks: List[Tuple[int, int]] = []
    dep_heads: List[int]
    dep_labels: List[str]

    @model_validator(mode="after")
    def _check_structure(self):
        n = len(self.tokens)
        if len(self.dep_heads) != n or len(self.dep_labels) != n:
            raise ValueError("dep_heads / dep_labels 长度与 tokens 不一致")
        if n and self.dep_heads.count(-1) != 1:
            raise ValueError("每句必须恰有一个根节点")
        if any(h < -1 or h >= n for h in self.dep_heads):
            raise ValueError("dep_heads 越界")
        lo, hi = self.char_offset, self.char_offset + len(self.text)
        spans = [(t.char_start, t.char_end) for t in self.tokens]
        spans += [(e.char_start, e.char_end) for e in self.entities]
        spans += list(self.np_chunks)
        for start, end in spans:
            if not (lo <= start < end <= hi):
                raise ValueError(f"片段 ({start}, {end}) 超出句子范围 [{lo}, {hi})")
        return self


# ==================== 后端结果 ====================


class QAResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    answer_text: str
    answerable_prob: float = Field(ge=0.0, le=1.0)
    is_answerable: bool

    @classmethod
    def from_prob(cls, answer_text: str, answerable_prob: float, threshold: float) -> "QAResult":
        return cls(answer_text=answer_text, answerable_prob=answerable_prob,
                   is_answerable=answerable_prob >= threshold)


class LercScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float = Field(ge=1.0, le=5.0)


# ==================== 逐题轨迹与报告 ====================


class QuestionRecord(BaseModel):
    """单个问题的完整轨迹"""
    model_config = ConfigDict(frozen=True)

    answer: AnswerCandidate
    question: str
    summ_answerable: bool = False
    summ_answer: str = ""
    summ_f1: float = Field(default=0.0, ge=0.0, le=1.0)
    filtered: bool = False
    input_answerable: bool = False
    input_answer: str = ""
    overlap_scores: Dict[str, float] = Field(default_factory=dict)
    penalty_applied: bool = False


class MetricReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    example_id: str
    score: float
    questions: List[QuestionRecord] = []
    n_selected: int = 0
    n_scored: int = 0
    degenerate: bool = False
    error: Optional[Dict[str, Any]] = None

    @model_validator(mode="after")
    def _counts(self):
        if self.n_scored > self.n_selected:
            raise ValueError("n_scored 不能大于 n_selected")
        return self


class EntailmentMatrix(BaseModel):
    """M×N 的 (矛盾, 中立, 蕴含) 三元组，行 = 文档句，列 = 摘要句"""
    model_config = ConfigDict(frozen=True)

    values: List[List[Tuple[float, float, float]]]

    @field_validator("values")
    @classmethod
    def _check(cls, values):
        if not values or not values[0]:
            raise ValueError("矩阵至少为 1×1")
        width = len(values[0])
        for row in values:
            if len(row) != width:
                raise ValueError("矩阵行宽不一致")
            for triple in row:
                if min(triple) < 0 or not math.isclose(sum(triple), 1.0, abs_tol=1e-6):
                    raise ValueError(f"概率三元组非法: {triple}")
        return values

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.values), len(self.values[0])

    def entailment_column(self, j: int) -> List[float]:
        return [row[j][2] for row in self.values]

    def column(self, j: int) -> List[Tuple[float, float, float]]:
        return [row[j] for row in self.values]
