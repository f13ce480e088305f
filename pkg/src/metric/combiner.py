"""
学习式组合器：SCConv 直方图聚合、QAFactEval-NLI 融合头及训练循环。

- 直方图：[0, 1] 上 H 个等宽分箱，最后一箱右闭，默认按条目数归一化。
- 卷积：宽度为 H（三通道时 3H）的全宽核，每个直方图得到一个标量，经 sigmoid 压缩。
- 融合：sigmoid(w · [qa_score, nli_score] + b)。
- 训练：二元交叉熵，Adam 或全批量梯度下降，固定轮数，按验证集损失保留最优参数。

直方图与参数无关，训练前一次算好；梯度均为解析形式。
"""
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.special import expit

from ..bean.ConfigModel import HistogramSpec, PipelineConfig, TrainingSettings
from ..bean.DomainModel import EntailmentMatrix, EvaluationExample
from ..bean.Errors import ConfigError, DegenerateLabels, MissingField, ValueOutOfRange
from ..client.BackendRegistry import BackendRegistry
from ..harness.classification import balanced_accuracy
from ..harness.ingest import read_jsonl, write_json
from .pipeline import entailment_matrix, max_support_score, report_score_vector, score_example

logger = logging.getLogger(__name__)

RANGE_TOLERANCE = 1e-6

PARAM_GROUPS: Dict[str, Tuple[str, ...]] = {
    "nli_conv": ("nli_kernel", "nli_bias"),
    "qa_conv": ("qa_kernel", "qa_bias"),
    "fusion": ("fusion_w", "fusion_b"),
}

Params = Dict[str, np.ndarray]


# ==================== 直方图 ====================

def histogram(values: Sequence[float], spec: HistogramSpec) -> np.ndarray:
    """等宽分箱；超出 [0, 1] 不超过 1e-6 的值截断，否则报错；空输入得到零向量"""
    array = np.asarray(values, dtype=float).ravel()
    if array.size == 0:
        return np.zeros(spec.bins)
    if array.min() < -RANGE_TOLERANCE or array.max() > 1.0 + RANGE_TOLERANCE or not np.isfinite(array).all():
        raise ValueOutOfRange(f"直方图输入超出 [0, 1]: [{array.min()}, {array.max()}]")
    counts, _ = np.histogram(np.clip(array, 0.0, 1.0), bins=spec.bins, range=(0.0, 1.0))
    counts = counts.astype(float)
    return counts / array.size if spec.normalize else counts


def sentence_histogram(column: Sequence[Any], spec: HistogramSpec) -> np.ndarray:
    """
    单个摘要句对全部文档句的分布。

    column 可以是蕴含概率列表，也可以是 (矛盾, 中立, 蕴含) 三元组列表；
    channels=all 时三个分量各自分箱后拼接。
    """
    array = np.asarray(column, dtype=float)
    if array.ndim == 1:
        if spec.channels == "all":
            raise ConfigError("三通道直方图需要 (矛盾, 中立, 蕴含) 三元组")
        return histogram(array, spec)
    if array.ndim != 2 or array.shape[1] != 3:
        raise ValueOutOfRange(f"蕴含列的形状非法: {array.shape}")
    if spec.channels == "entailment":
        return histogram(array[:, 2], spec)
    return np.concatenate([histogram(array[:, c], spec) for c in range(3)])


# ==================== 参数 ====================

class ConvWeights(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kernel: List[float]
    bias: float = 0.0


class FusionWeights(BaseModel):
    model_config = ConfigDict(extra="forbid")

    w: List[float] = Field(min_length=2, max_length=2)
    b: float = 0.0


class CombinerWeights(BaseModel):
    """组合器参数文件"""
    model_config = ConfigDict(extra="forbid")

    version: int = 1
    hist: HistogramSpec = HistogramSpec()
    nli_conv: ConvWeights
    qa_conv: ConvWeights
    fusion: FusionWeights
    provenance: Dict[str, Any] = {}

    @model_validator(mode="after")
    def _check(self):
        if len(self.nli_conv.kernel) != self.hist.nli_width:
            raise ValueError(f"nli_conv 核宽应为 {self.hist.nli_width}")
        if len(self.qa_conv.kernel) != self.hist.bins:
            raise ValueError(f"qa_conv 核宽应为 {self.hist.bins}")
        values = [*self.nli_conv.kernel, self.nli_conv.bias, *self.qa_conv.kernel, self.qa_conv.bias,
                  *self.fusion.w, self.fusion.b]
        if not all(math.isfinite(v) for v in values):
            raise ValueError("参数必须为有限值")
        return self

    @classmethod
    def zeros(cls, spec: HistogramSpec = HistogramSpec()) -> "CombinerWeights":
        return cls.from_arrays({
            "nli_kernel": np.zeros(spec.nli_width), "nli_bias": np.zeros(()),
            "qa_kernel": np.zeros(spec.bins), "qa_bias": np.zeros(()),
            "fusion_w": np.zeros(2), "fusion_b": np.zeros(()),
        }, spec)

    @classmethod
    def initial(cls, spec: HistogramSpec = HistogramSpec(), seed: int = 0, scale: float = 0.1) -> "CombinerWeights":
        """偏置为 0，核在 ±scale 内均匀初始化"""
        rng = np.random.default_rng(seed)
        return cls.from_arrays({
            "nli_kernel": rng.uniform(-scale, scale, spec.nli_width), "nli_bias": np.zeros(()),
            "qa_kernel": rng.uniform(-scale, scale, spec.bins), "qa_bias": np.zeros(()),
            "fusion_w": rng.uniform(-scale, scale, 2), "fusion_b": np.zeros(()),
        }, spec)

    @classmethod
    def from_arrays(cls, params: Params, spec: HistogramSpec,
                    provenance: Optional[Dict[str, Any]] = None) -> "CombinerWeights":
        return cls(
            hist=spec,
            nli_conv=ConvWeights(kernel=params["nli_kernel"].tolist(), bias=float(params["nli_bias"])),
            qa_conv=ConvWeights(kernel=params["qa_kernel"].tolist(), bias=float(params["qa_bias"])),
            fusion=FusionWeights(w=params["fusion_w"].tolist(), b=float(params["fusion_b"])),
            provenance=provenance or {},
        )

    def arrays(self) -> Params:
        return {
            "nli_kernel": np.asarray(self.nli_conv.kernel, dtype=float),
            "nli_bias": np.asarray(self.nli_conv.bias, dtype=float),
            "qa_kernel": np.asarray(self.qa_conv.kernel, dtype=float),
            "qa_bias": np.asarray(self.qa_conv.bias, dtype=float),
            "fusion_w": np.asarray(self.fusion.w, dtype=float),
            "fusion_b": np.asarray(self.fusion.b, dtype=float),
        }

    def save(self, path: Union[str, Path]) -> None:
        write_json(path, self.model_dump(mode="json"))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CombinerWeights":
        try:
            return cls.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, ValidationError) as e:
            raise ConfigError(f"无法读取组合器参数 {path}: {e}") from e


def _resolve_spec(weights: CombinerWeights, spec: Optional[HistogramSpec]) -> HistogramSpec:
    if spec is not None and spec != weights.hist:
        raise ConfigError(f"直方图规格与参数文件不一致: {spec} vs {weights.hist}")
    return weights.hist


# ==================== 推理 ====================

def scconv_score(matrix: EntailmentMatrix, weights: CombinerWeights, spec: Optional[HistogramSpec] = None) -> float:
    """每个摘要句的直方图经卷积与 sigmoid 得分，再对摘要句取均值"""
    spec = _resolve_spec(weights, spec)
    params = weights.arrays()
    rows = np.stack([sentence_histogram(matrix.column(j), spec) for j in range(matrix.shape[1])])
    return float(expit(rows @ params["nli_kernel"] + params["nli_bias"]).mean())


def qafe_nli_score(answer_scores: Sequence[float], nli_score: float, weights: CombinerWeights,
                   spec: Optional[HistogramSpec] = None) -> float:
    spec = _resolve_spec(weights, spec)
    params = weights.arrays()
    qa_score = expit(histogram(answer_scores, spec) @ params["qa_kernel"] + params["qa_bias"])
    fused = params["fusion_w"] @ np.array([qa_score, nli_score]) + params["fusion_b"]
    return float(expit(fused))


async def scconv_example_score(example: EvaluationExample, weights: CombinerWeights, config: PipelineConfig,
                               registry: BackendRegistry) -> float:
    matrix = await entailment_matrix(example, registry, config.nli_backend_id, config.annotator_backend_id)
    return scconv_score(matrix, weights)


async def qafe_nli_example_score(example: EvaluationExample, weights: CombinerWeights, config: PipelineConfig,
                                 registry: BackendRegistry) -> float:
    """端到端 QAFactEval-NLI：答案得分直方图与 SCConv 蕴含分融合"""
    report = await score_example(example, config, registry)
    nli = await scconv_example_score(example, weights, config, registry)
    return qafe_nli_score(report_score_vector(report, config), nli, weights)


# ==================== 训练特征 ====================

class FeatureRecord(BaseModel):
    """训练特征：答案得分序列、NLI 分（或逐句蕴含列）与二值标签"""
    model_config = ConfigDict(frozen=True)

    id: str
    answer_scores: List[float] = []
    nli_score: Optional[float] = None
    entailment: Optional[List[List[Any]]] = None
    label: int = Field(ge=0, le=1)
    dataset: str = ""

    @model_validator(mode="after")
    def _has_nli(self):
        if self.nli_score is None and not self.entailment:
            raise ValueError("nli_score 与 entailment 至少提供一个")
        return self


def load_feature_records(path: Union[str, Path]) -> List[FeatureRecord]:
    records = []
    for raw in read_jsonl(path):
        try:
            records.append(FeatureRecord.model_validate({**raw, "id": str(raw.get("id"))}))
        except ValidationError as e:
            raise MissingField(f"{path}: 特征记录 {raw.get('id')} 格式错误: {e.errors()[0]['msg']}",
                               record_id=raw.get("id")) from e
    return records


async def extract_features(example: EvaluationExample, config: PipelineConfig, registry: BackendRegistry,
                           spec: HistogramSpec = HistogramSpec()) -> FeatureRecord:
    """由流水线生成一条训练特征"""
    if example.label is None:
        raise MissingField(f"{example.id} 缺少 label，无法生成训练特征", record_id=example.id)
    report = await score_example(example, config, registry)
    matrix = await entailment_matrix(example, registry, config.nli_backend_id, config.annotator_backend_id)
    n_summary = matrix.shape[1]
    if spec.channels == "all":
        columns = [[list(t) for t in matrix.column(j)] for j in range(n_summary)]
    else:
        columns = [matrix.entailment_column(j) for j in range(n_summary)]
    return FeatureRecord(id=example.id, answer_scores=report_score_vector(report, config),
                         nli_score=max_support_score(matrix), entailment=columns, label=example.label,
                         dataset=example.dataset)


@dataclass
class FeatureSet:
    """预先计算好的直方图；逐句蕴含直方图按最大句数补零并配掩码"""
    ids: List[str]
    answer_hist: np.ndarray
    nli_fixed: np.ndarray
    sentence_hist: np.ndarray
    sentence_mask: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_records(cls, records: Sequence[FeatureRecord], spec: HistogramSpec) -> "FeatureSet":
        n = len(records)
        width = max((len(r.entailment or []) for r in records), default=0)
        sentence_hist = np.zeros((n, width, spec.nli_width))
        sentence_mask = np.zeros((n, width))
        for i, record in enumerate(records):
            for j, column in enumerate(record.entailment or []):
                sentence_hist[i, j] = sentence_histogram(column, spec)
                sentence_mask[i, j] = 1.0
        return cls(
            ids=[r.id for r in records],
            answer_hist=np.stack([histogram(r.answer_scores, spec) for r in records]) if n
            else np.zeros((0, spec.bins)),
            nli_fixed=np.array([r.nli_score if r.nli_score is not None else 0.0 for r in records], dtype=float),
            sentence_hist=sentence_hist,
            sentence_mask=sentence_mask,
            labels=np.array([r.label for r in records], dtype=float),
        )

    def subset(self, indices: Sequence[int]) -> "FeatureSet":
        idx = np.asarray(indices, dtype=int)
        return FeatureSet(
            ids=[self.ids[i] for i in idx], answer_hist=self.answer_hist[idx], nli_fixed=self.nli_fixed[idx],
            sentence_hist=self.sentence_hist[idx], sentence_mask=self.sentence_mask[idx], labels=self.labels[idx],
        )

    def __len__(self) -> int:
        return len(self.ids)


# ==================== 前向与梯度 ====================

def _forward(params: Params, data: FeatureSet):
    qa = expit(data.answer_hist @ params["qa_kernel"] + params["qa_bias"])
    sentence = expit(data.sentence_hist @ params["nli_kernel"] + params["nli_bias"])
    counts = data.sentence_mask.sum(axis=1)
    pooled = (sentence * data.sentence_mask).sum(axis=1) / np.maximum(counts, 1.0)
    nli = np.where(counts > 0, pooled, data.nli_fixed)
    logits = params["fusion_w"][0] * qa + params["fusion_w"][1] * nli + params["fusion_b"]
    return logits, qa, sentence, counts, nli


def predict_proba(params: Params, data: FeatureSet) -> np.ndarray:
    return expit(_forward(params, data)[0])


def loss(params: Params, data: FeatureSet) -> float:
    logits = _forward(params, data)[0]
    return float(np.mean(np.logaddexp(0.0, logits) - data.labels * logits))


def loss_and_gradients(params: Params, data: FeatureSet) -> Tuple[float, Params]:
    """平均二元交叉熵及其对全部参数的解析梯度"""
    logits, qa, sentence, counts, nli = _forward(params, data)
    n = len(data)
    value = float(np.mean(np.logaddexp(0.0, logits) - data.labels * logits))

    d_logits = (expit(logits) - data.labels) / n
    d_qa = d_logits * params["fusion_w"][0] * qa * (1.0 - qa)
    d_nli = d_logits * params["fusion_w"][1] * (counts > 0)
    d_sentence = (d_nli / np.maximum(counts, 1.0))[:, None] * data.sentence_mask * sentence * (1.0 - sentence)

    grads = {
        "fusion_w": np.array([d_logits @ qa, d_logits @ nli]),
        "fusion_b": np.asarray(d_logits.sum()),
        "qa_kernel": data.answer_hist.T @ d_qa,
        "qa_bias": np.asarray(d_qa.sum()),
        "nli_kernel": np.einsum("ij,ijw->w", d_sentence, data.sentence_hist),
        "nli_bias": np.asarray(d_sentence.sum()),
    }
    return value, grads


# ==================== 优化器 ====================

class GradientDescent:
    def __init__(self, settings: TrainingSettings):
        self.lr = settings.learning_rate

    def step(self, params: Params, grads: Params, keys: Sequence[str]) -> None:
        for key in keys:
            params[key] = params[key] - self.lr * grads[key]


class Adam:
    """带偏差修正的 Adam"""

    def __init__(self, settings: TrainingSettings):
        self.lr, self.beta1, self.beta2, self.eps = (settings.learning_rate, settings.beta1,
                                                     settings.beta2, settings.eps)
        self.t = 0
        self.m: Params = {}
        self.v: Params = {}

    def step(self, params: Params, grads: Params, keys: Sequence[str]) -> None:
        self.t += 1
        for key in keys:
            g = grads[key]
            self.m[key] = self.beta1 * self.m.get(key, np.zeros_like(g)) + (1 - self.beta1) * g
            self.v[key] = self.beta2 * self.v.get(key, np.zeros_like(g)) + (1 - self.beta2) * g * g
            m_hat = self.m[key] / (1 - self.beta1 ** self.t)
            v_hat = self.v[key] / (1 - self.beta2 ** self.t)
            params[key] = params[key] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ==================== 训练 ====================

def stratified_split(labels: np.ndarray, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """按类别分层抽出验证集，每个类别至少留一个样本在训练集"""
    rng = np.random.default_rng(seed)
    train, valid = [], []
    for value in (0.0, 1.0):
        members = rng.permutation(np.flatnonzero(labels == value))
        k = min(int(round(members.size * fraction)), members.size - 1)
        valid.extend(members[:k])
        train.extend(members[k:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(valid, dtype=int))


def _validation_balanced_accuracy(params: Params, data: FeatureSet) -> Optional[float]:
    labels = data.labels.astype(int)
    if labels.min() == labels.max():
        return None
    return balanced_accuracy(predict_proba(params, data) >= 0.5, labels)


def train_combiner(records: Sequence[FeatureRecord], spec: HistogramSpec = HistogramSpec(),
                   settings: TrainingSettings = TrainingSettings(), initial: Optional[CombinerWeights] = None,
                   dataset: str = "") -> CombinerWeights:
    """训练组合器，返回验证集损失最低的一组参数"""
    labels = {r.label for r in records}
    if labels != {0, 1}:
        raise DegenerateLabels(f"训练数据只有一个类别: {sorted(labels)}", dataset=dataset)
    if initial is not None:
        spec = _resolve_spec(initial, spec)

    data = FeatureSet.from_records(records, spec)
    train_idx, valid_idx = stratified_split(data.labels, settings.validation_fraction, settings.seed)
    train = data.subset(train_idx)
    valid = data.subset(valid_idx) if valid_idx.size else train

    params = (initial or CombinerWeights.initial(spec, settings.seed, settings.init_scale)).arrays()
    keys = [key for group in settings.trainable for key in PARAM_GROUPS[group]]
    optimizer = Adam(settings) if settings.optimizer == "adam" else GradientDescent(settings)
    rng = np.random.default_rng(settings.seed + 1)

    best_params = {k: v.copy() for k, v in params.items()}
    best_loss, best_epoch = loss(params, valid), 0
    history = []
    for epoch in range(1, settings.epochs + 1):
        if settings.optimizer == "gd":
            batches = [np.arange(len(train))]
        else:
            order = rng.permutation(len(train))
            batches = [order[i:i + settings.batch_size] for i in range(0, len(train), settings.batch_size)]
        for batch in batches:
            _, grads = loss_and_gradients(params, train.subset(batch))
            optimizer.step(params, grads, keys)
        history.append(loss(params, train))
        valid_loss = loss(params, valid)
        if valid_loss < best_loss:
            best_params = {k: v.copy() for k, v in params.items()}
            best_loss, best_epoch = valid_loss, epoch

    valid_bacc = _validation_balanced_accuracy(best_params, valid)
    logger.info(f"组合器训练完成{f'（{dataset}）' if dataset else ''}: 最优轮次 {best_epoch}/{settings.epochs}，"
                f"验证损失 {best_loss:.4f}，验证平衡准确率 {valid_bacc}")
    provenance = {
        "dataset": dataset,
        "optimizer": settings.optimizer,
        "trainable": list(settings.trainable),
        "seed": settings.seed,
        "epochs": settings.epochs,
        "best_epoch": best_epoch,
        "best_valid_loss": best_loss,
        "valid_balanced_accuracy": valid_bacc,
        "n_train": len(train),
        "n_valid": int(valid_idx.size),
        "train_loss": history,
    }
    return CombinerWeights.from_arrays(best_params, spec, provenance)


def train_supervised(records: Sequence[FeatureRecord], spec: HistogramSpec = HistogramSpec(),
                     settings: TrainingSettings = TrainingSettings()) -> Dict[str, CombinerWeights]:
    """每个数据集只用自身的验证集样本训练一组参数"""
    by_dataset: Dict[str, List[FeatureRecord]] = defaultdict(list)
    for record in records:
        by_dataset[record.dataset].append(record)
    return {name: train_combiner(by_dataset[name], spec, settings, dataset=name) for name in sorted(by_dataset)}
