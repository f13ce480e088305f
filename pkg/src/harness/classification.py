"""
基于阈值的二分类评测：阈值选择、平衡准确率、消融划分与基准汇总。

正类 = 事实一致（label 1），分数 >= 阈值预测为正类。
"""
import logging
from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from ..bean.ConfigModel import HarnessConfig
from ..bean.Errors import DegenerateLabels, DegenerateSplit, MisalignedInputs
from ..bean.HarnessModel import BenchmarkResult, ConfusionCounts, DatasetResult, ScoredExample

logger = logging.getLogger(__name__)

T = TypeVar("T")


def _as_labels(labels: Sequence[int]) -> np.ndarray:
    array = np.asarray(labels)
    if array.size and not np.isin(array, (0, 1)).all():
        raise DegenerateLabels("标签必须为 0 或 1")
    return array.astype(bool)


def confusion(predictions: Sequence[bool], labels: Sequence[int]) -> ConfusionCounts:
    predicted = np.asarray(predictions, dtype=bool)
    actual = _as_labels(labels)
    if predicted.shape != actual.shape:
        raise MisalignedInputs(f"预测与标签长度不一致: {predicted.shape} vs {actual.shape}")
    return ConfusionCounts(
        tp=int(np.sum(predicted & actual)),
        fn=int(np.sum(~predicted & actual)),
        tn=int(np.sum(~predicted & ~actual)),
        fp=int(np.sum(predicted & ~actual)),
    )


def balanced_accuracy_from_counts(counts: ConfusionCounts) -> float:
    n_pos, n_neg = counts.tp + counts.fn, counts.tn + counts.fp
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("标签只有一个类别，平衡准确率无定义")
    # 整数分子分母，避免 (TPR + TNR) / 2 的舍入
    return (counts.tp * n_neg + counts.tn * n_pos) / (2 * n_pos * n_neg)


def balanced_accuracy(predictions: Sequence[bool], labels: Sequence[int]) -> float:
    """(TPR + TNR) / 2"""
    return balanced_accuracy_from_counts(confusion(predictions, labels))


def held_out_accuracy(predictions: Sequence[bool], labels: Sequence[int]) -> float:
    """评测集的平衡准确率；评测集只剩一个类别时退化为该类别的召回率"""
    counts = confusion(predictions, labels)
    if counts.tp + counts.fn == 0:
        return counts.tn / (counts.tn + counts.fp)
    if counts.tn + counts.fp == 0:
        return counts.tp / (counts.tp + counts.fn)
    return balanced_accuracy_from_counts(counts)


def threshold_candidates(scores: Sequence[float]) -> np.ndarray:
    """相邻不同分数的中点，加上 -inf / +inf 两个哨兵，升序"""
    distinct = np.unique(np.asarray(scores, dtype=float))
    lower, upper = distinct[:-1], distinct[1:]
    midpoints = (lower + upper) / 2.0
    # 相邻浮点数的中点可能舍入回下界
    midpoints = np.where(midpoints > lower, midpoints, upper)
    return np.concatenate(([-np.inf], midpoints, [np.inf]))


def select_threshold(scores: Sequence[float], labels: Sequence[int]) -> Tuple[float, float]:
    """在候选集上最大化平衡准确率，并列时取最小阈值；返回 (阈值, 验证集平衡准确率)"""
    values = np.asarray(scores, dtype=float)
    actual = _as_labels(labels)
    if values.shape != actual.shape:
        raise MisalignedInputs(f"分数与标签长度不一致: {values.shape} vs {actual.shape}")
    n_pos, n_neg = int(actual.sum()), int((~actual).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("验证集只有一个类别，无法选择阈值")

    candidates = threshold_candidates(values)
    positives, negatives = np.sort(values[actual]), np.sort(values[~actual])
    tp = n_pos - np.searchsorted(positives, candidates, side="left")
    tn = np.searchsorted(negatives, candidates, side="left")
    numerators = tp.astype(np.int64) * n_neg + tn.astype(np.int64) * n_pos
    best = int(np.argmax(numerators))
    return float(candidates[best]), float(numerators[best]) / (2 * n_pos * n_neg)


def predict(scores: Sequence[float], threshold: float) -> np.ndarray:
    return np.asarray(scores, dtype=float) >= threshold


def ablation_split(examples: Sequence[T], seed: int) -> Tuple[List[T], List[T]]:
    """
    固定种子打乱后划分为 (调参集 80%, 评测集 20%)，调参集大小为 n * 4 // 5。

    调参集必须包含两个类别；评测集的名额按类别比例分配，
    在两类样本都够分时尽量让评测集也包含两个类别。
    """
    n = len(examples)
    if n < 5:
        raise DegenerateSplit(f"样本数 {n} 少于 5，无法划分")
    labels = [getattr(e, "label", None) for e in examples]
    if any(label not in (0, 1) for label in labels):
        raise DegenerateSplit("存在缺少二值标签的样本")
    n_pos = sum(labels)
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateSplit(f"调参集需要两个类别（正 {n_pos}，负 {n_neg}）")

    n_eval = n - n * 4 // 5
    # 每个类别至少留一个在调参集
    lo, hi = max(0, n_eval - (n_neg - 1)), min(n_eval, n_pos - 1)
    if n_eval >= 2 and max(lo, 1) <= min(hi, n_eval - 1):
        lo, hi = max(lo, 1), min(hi, n_eval - 1)
    eval_pos = min(max(round(n_eval * n_pos / n), lo), hi)
    quota = {1: eval_pos, 0: n_eval - eval_pos}

    tune, held_out = [], []
    for i in np.random.default_rng(seed).permutation(n):
        label = labels[i]
        if quota[label] > 0:
            quota[label] -= 1
            held_out.append(examples[i])
        else:
            tune.append(examples[i])
    return tune, held_out


# ==================== 基准汇总 ====================

def group_by_dataset(scored: Sequence[ScoredExample]) -> Dict[str, Dict[str, List[ScoredExample]]]:
    grouped: Dict[str, Dict[str, List[ScoredExample]]] = defaultdict(lambda: {"valid": [], "test": []})
    for example in scored:
        grouped[example.dataset][example.split].append(example)
    return dict(sorted(grouped.items()))


def _require_labels(examples: Sequence[ScoredExample], dataset: str) -> List[int]:
    labels = [e.label for e in examples]
    if any(label is None for label in labels):
        raise DegenerateLabels(f"数据集 {dataset} 存在缺少二值标签的样本")
    return labels


def _align(primary: Sequence[ScoredExample], other: Dict[str, ScoredExample], dataset: str) -> List[ScoredExample]:
    try:
        return [other[e.example_id] for e in primary]
    except KeyError as e:
        raise MisalignedInputs(f"对比分数缺少数据集 {dataset} 的样本 {e.args[0]}") from e


def benchmark(scored: Sequence[ScoredExample], config: Optional[HarnessConfig] = None,
              comparison: Optional[Sequence[ScoredExample]] = None, seed: int = 0) -> BenchmarkResult:
    """在 valid 上选阈值、在 test 上计算平衡准确率；给定对比分数时附加显著性检验"""
    from .significance import bootstrap_compare

    config = config or HarnessConfig()
    grouped = group_by_dataset(scored)
    if not grouped:
        raise DegenerateSplit("没有可评测的样本")
    for name, splits in grouped.items():
        missing = [split for split, items in splits.items() if not items]
        if missing:
            raise DegenerateSplit(f"数据集 {name} 缺少划分: {', '.join(missing)}", dataset=name, missing=missing)
    other = {e.example_id: e for e in comparison} if comparison is not None else None

    results: Dict[str, DatasetResult] = {}
    for name, splits in grouped.items():
        valid, test = splits["valid"], splits["test"]
        valid_labels, test_labels = _require_labels(valid, name), _require_labels(test, name)
        threshold, valid_bacc = select_threshold([e.metric_score for e in valid], valid_labels)
        test_scores = [e.metric_score for e in test]
        counts = confusion(predict(test_scores, threshold), test_labels)
        significance = None
        if other is not None:
            other_valid, other_test = _align(valid, other, name), _align(test, other, name)
            threshold_b, _ = select_threshold([e.metric_score for e in other_valid], valid_labels)
            significance = bootstrap_compare(
                test_scores, [e.metric_score for e in other_test], test_labels,
                threshold_a=threshold, threshold_b=threshold_b, resamples=config.resamples,
                levels=config.levels, n_comparisons=len(grouped), seed=seed, workers=config.workers,
            )
        results[name] = DatasetResult(
            threshold=threshold, valid_balanced_accuracy=valid_bacc,
            balanced_accuracy=balanced_accuracy_from_counts(counts), n_valid=len(valid), n_test=len(test),
            confusion=counts, significance=significance,
        )
        logger.info(f"{name}: 阈值 {threshold:.4f}，测试集平衡准确率 {results[name].balanced_accuracy:.4f}")

    average = float(np.mean([r.balanced_accuracy for r in results.values()]))
    return BenchmarkResult(datasets=results, benchmark_average=average)
