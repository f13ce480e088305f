import hashlib
import json
from pathlib import Path
from typing import List, Any, Optional, Dict, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .DomainModel import AnswerStrategy
from .Errors import ConfigError

# ==================== 配置模型 ====================

OverlapMetric = Literal["EM", "F1", "LERC", "IS_ANSWERED_INPUT"]


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class OverlapConfig(_Config):
    """答案重合度配置"""
    metrics: List[OverlapMetric] = ["EM", "F1", "LERC", "IS_ANSWERED_INPUT"]
    primary_metric: OverlapMetric = "LERC"
    lerc_rescale: bool = True

    @model_validator(mode="after")
    def _check(self):
        if len(set(self.metrics)) != len(self.metrics):
            raise ValueError("metrics 不能重复")
        if self.primary_metric not in self.metrics:
            raise ValueError(f"primary_metric {self.primary_metric} 不在 metrics 中")
        return self

    @property
    def scale(self) -> tuple:
        if self.primary_metric == "LERC" and not self.lerc_rescale:
            return 1.0, 5.0
        return 0.0, 1.0


class PipelineConfig(_Config):
    """QAFactEval 流水线配置"""
    answer_strategy: AnswerStrategy = AnswerStrategy.NP_CHUNKS
    annotator_backend_id: str = "heuristic"
    qg_backend_id: str = "heuristic"
    qa_backend_id: str = "heuristic"
    answerability_backend_id: Optional[str] = None
    lerc_backend_id: str = "heuristic"
    nli_backend_id: str = "heuristic"
    overlap: OverlapConfig = OverlapConfig()
    summ_filter_enabled: bool = True
    summ_f1_threshold: float = Field(default=0.60, ge=0.0, le=1.0)
    answerability_penalty_enabled: bool = True
    answerability_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    penalty_value: float = 0.0
    degenerate_score: float = 0.5
    parallelism: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_scale(self):
        lo, hi = self.overlap.scale
        if not lo <= self.degenerate_score <= hi:
            raise ValueError(f"degenerate_score {self.degenerate_score} 超出当前分值范围 [{lo}, {hi}]")
        return self


class HistogramSpec(_Config):
    """直方图规格"""
    bins: int = Field(default=50, ge=2)
    normalize: bool = True
    channels: Literal["entailment", "all"] = "entailment"

    @property
    def nli_width(self) -> int:
        return self.bins * (3 if self.channels == "all" else 1)


class TrainingSettings(_Config):
    """组合器训练参数"""
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=1e-2, ge=0.0)
    epochs: int = Field(default=200, ge=1)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    optimizer: Literal["adam", "gd"] = "adam"
    trainable: List[Literal["nli_conv", "qa_conv", "fusion"]] = ["nli_conv", "qa_conv", "fusion"]
    validation_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    init_scale: float = 0.1
    seed: int = Field(default=0, ge=0)


class CombinerConfig(_Config):
    hist: HistogramSpec = HistogramSpec()
    training: TrainingSettings = TrainingSettings()


class HarnessConfig(_Config):
    """元评测配置"""
    resamples: int = Field(default=10000, ge=1000)
    levels: List[float] = [0.05, 0.01]
    workers: int = Field(default=1, ge=1)
    higher_is_consistent: bool = True


EXECUTION_ONLY_KEYS = ("parallelism", "cache_dir")


class RunConfig(_Config):
    """一次运行的完整配置树"""
    pipeline: PipelineConfig = PipelineConfig()
    combiner: CombinerConfig = CombinerConfig()
    harness: HarnessConfig = HarnessConfig()
    backends: Dict[str, str] = {"heuristic": "heuristic"}
    cache_dir: Optional[str] = None
    seed: int = Field(default=0, ge=0)
    parallelism: int = Field(default=1, ge=1)

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        """读取 JSON 配置并应用命令行覆盖项"""
        data: Dict[str, Any] = {}
        if path:
            try:
                data = json.loads(Path(path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"无法读取配置文件 {path}: {e}") from e
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key == "backends":
                data["backends"] = {**data.get("backends", {"heuristic": "heuristic"}), **value}
            else:
                data[key] = value
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"配置无效: {e}") from e

    def resolved_pipeline(self) -> PipelineConfig:
        """流水线的并发度以顶层 parallelism 为准"""
        return self.pipeline.model_copy(update={"parallelism": self.parallelism})

    def reproducible_dict(self) -> Dict[str, Any]:
        data = self.model_dump(mode="json")
        for key in EXECUTION_ONLY_KEYS:
            data.pop(key, None)
        data["pipeline"].pop("parallelism", None)
        data["harness"].pop("workers", None)
        return data

    def digest(self) -> str:
        canonical = json.dumps(self.reproducible_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
