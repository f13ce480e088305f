import math
from typing import List, Any, Optional, Dict, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

# ==================== 评测输入 ====================


class ScoreRecord(BaseModel):
    """分数文件中的一行"""
    model_config = ConfigDict(frozen=True)

    id: str
    dataset: str = ""
    system: str = ""
    doc_id: Optional[str] = None
    score: float

    @field_validator("score")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("score 必须为有限值")
        return value


class Judgment(BaseModel):
    """人工标注：二值 label 或连续 human_score"""
    model_config = ConfigDict(frozen=True)

    id: str
    label: Optional[int] = None
    human_score: Optional[float] = None


class ScoredExample(BaseModel):
    """带指标分数与标签的评测样本"""
    model_config = ConfigDict(frozen=True)

    example_id: str
    dataset: str = ""
    system: str = ""
    doc_id: Optional[str] = None
    split: Literal["valid", "test"] = "test"
    metric_score: float
    label: Optional[int] = None
    human_score: Optional[float] = None

    @field_validator("metric_score")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("metric_score 必须为有限值")
        return value


# ==================== 评测结果 ====================


class ConfusionCounts(BaseModel):
    tp: int = 0
    fn: int = 0
    tn: int = 0
    fp: int = 0


class BootstrapInterval(BaseModel):
    level: float
    corrected_level: float
    lower: float
    upper: float
    significant: bool


class SignificanceResult(BaseModel):
    """配对 bootstrap 的结果：差值 = A 的平衡准确率 - B 的平衡准确率"""
    observed_difference: float
    balanced_accuracy_a: float
    balanced_accuracy_b: float
    threshold_a: float
    threshold_b: float
    resamples: int
    n_comparisons: int
    seed: int
    intervals: List[BootstrapInterval]


class DatasetResult(BaseModel):
    threshold: float
    valid_balanced_accuracy: float
    balanced_accuracy: float
    n_valid: int
    n_test: int
    confusion: ConfusionCounts
    significance: Optional[SignificanceResult] = None


class BenchmarkResult(BaseModel):
    """各数据集平衡准确率与基准平均值（各数据集的不加权均值）"""
    datasets: Dict[str, DatasetResult]
    benchmark_average: float

    @property
    def balanced_accuracy(self) -> Dict[str, float]:
        return {name: result.balanced_accuracy for name, result in self.datasets.items()}

    @property
    def thresholds(self) -> Dict[str, float]:
        return {name: result.threshold for name, result in self.datasets.items()}


class CorrelationCell(BaseModel):
    value: Optional[float] = None
    n: int = 0
    n_groups: Optional[int] = None
    skipped_groups: Optional[int] = None
    error: Optional[str] = None


class StatsMismatch(BaseModel):
    dataset: str
    field: str
    expected: float
    observed: float


class StatsReport(BaseModel):
    mismatches: List[StatsMismatch] = []
    skipped: List[str] = []
    observed: Dict[str, Dict[str, float]] = Field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.mismatches


def dump_result(model: BaseModel) -> Dict[str, Any]:
    """序列化结果；无穷阈值以字符串输出以保持合法 JSON"""
    def convert(value):
        if isinstance(value, float) and math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if isinstance(value, dict):
            return {k: convert(v) for k, v in value.items()}
        if isinstance(value, list):
            return [convert(v) for v in value]
        return value
    return convert(model.model_dump(mode="python"))
