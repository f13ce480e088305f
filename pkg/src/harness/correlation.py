"""
指标分数与人工分数的相关性：实例级（全部样本合并）与摘要级（按原文分组后取均值）。
"""
import logging
from collections import defaultdict
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import kendalltau, pearsonr, spearmanr

from ..bean.Errors import InsufficientVariance, MisalignedInputs, NoQualifyingGroups, PreconditionViolation
from ..bean.HarnessModel import CorrelationCell, ScoredExample

logger = logging.getLogger(__name__)

COEFFICIENTS: Dict[str, Callable] = {
    "pearson": lambda x, y: pearsonr(x, y)[0],
    "spearman": lambda x, y: spearmanr(x, y)[0],
    "kendall": lambda x, y: kendalltau(x, y, variant="b")[0],
}
LEVELS = ("instance", "summary")


def _coefficient(name: str) -> Callable:
    if name not in COEFFICIENTS:
        raise PreconditionViolation(f"未知的相关系数: {name}（可选 {sorted(COEFFICIENTS)}）")
    return COEFFICIENTS[name]


def _varies(values: np.ndarray) -> bool:
    return values.size >= 2 and bool(np.ptp(values) > 0)


def instance_correlation(metric_scores: Sequence[float], human_scores: Sequence[float],
                         coefficient: str = "pearson") -> float:
    x, y = np.asarray(metric_scores, dtype=float), np.asarray(human_scores, dtype=float)
    if x.shape != y.shape:
        raise MisalignedInputs(f"输入长度不一致: {x.shape} vs {y.shape}")
    func = _coefficient(coefficient)
    if not (_varies(x) and _varies(y)):
        raise InsufficientVariance("输入为常数或样本不足，相关系数无定义")
    return float(func(x, y))


def summary_correlation(metric_scores: Sequence[float], human_scores: Sequence[float],
                        doc_ids: Sequence[Optional[str]], systems: Sequence[Optional[str]],
                        coefficient: str = "pearson") -> Tuple[float, int, int]:
    """
    按 doc_id 分组，组内至少两个不同系统且两侧方差非零才参与；返回 (组均值, 合格组数, 跳过组数)。
    """
    x, y = np.asarray(metric_scores, dtype=float), np.asarray(human_scores, dtype=float)
    if not (x.size == y.size == len(doc_ids) == len(systems)):
        raise MisalignedInputs("分数、doc_id、system 长度不一致")
    func = _coefficient(coefficient)

    groups: Dict[str, List[int]] = defaultdict(list)
    for index, (doc_id, system) in enumerate(zip(doc_ids, systems)):
        if doc_id is not None and system:
            groups[doc_id].append(index)

    values, skipped = [], 0
    for doc_id in sorted(groups):
        members = groups[doc_id]
        if len({systems[i] for i in members}) < 2 or not (_varies(x[members]) and _varies(y[members])):
            skipped += 1
            continue
        values.append(float(func(x[members], y[members])))
    if not values:
        raise NoQualifyingGroups(f"没有满足条件的摘要级分组（共 {len(groups)} 组）", skipped=skipped)
    return float(np.mean(values)), len(values), skipped


def correlate(metric_scores: Sequence[float], human_scores: Sequence[float], level: str = "instance",
              coefficient: str = "pearson", doc_ids: Optional[Sequence[Optional[str]]] = None,
              systems: Optional[Sequence[Optional[str]]] = None) -> float:
    if level == "instance":
        return instance_correlation(metric_scores, human_scores, coefficient)
    if level == "summary":
        n = len(metric_scores)
        return summary_correlation(metric_scores, human_scores, doc_ids or [None] * n,
                                   systems or [None] * n, coefficient)[0]
    raise PreconditionViolation(f"未知的相关性层级: {level}")


# ==================== 相关性表 ====================

def _human_values(examples: Sequence[ScoredExample]) -> List[float]:
    values = []
    for e in examples:
        value = e.human_score if e.human_score is not None else e.label
        if value is None:
            raise MisalignedInputs(f"{e.example_id} 缺少人工分数")
        values.append(float(value))
    return values


def _cell(examples: Sequence[ScoredExample], level: str, coefficient: str) -> CorrelationCell:
    x = [e.metric_score for e in examples]
    y = _human_values(examples)
    if level == "instance":
        return CorrelationCell(value=instance_correlation(x, y, coefficient), n=len(x))
    value, n_groups, skipped = summary_correlation(x, y, [e.doc_id for e in examples],
                                                   [e.system for e in examples], coefficient)
    return CorrelationCell(value=value, n=len(x), n_groups=n_groups, skipped_groups=skipped)


def correlation_table(scored: Sequence[ScoredExample], levels: Sequence[str] = LEVELS,
                      coefficients: Sequence[str] = tuple(COEFFICIENTS)) -> Dict[str, Dict[str, Dict[str, dict]]]:
    """
    每个数据集一行，另加合并全部样本的 "all" 行。

    单个数据集的单元格无定义时记录错误名；"all" 行的错误直接抛出。
    """
    for name in levels:
        if name not in LEVELS:
            raise PreconditionViolation(f"未知的相关性层级: {name}")
    for name in coefficients:
        _coefficient(name)

    by_dataset: Dict[str, List[ScoredExample]] = defaultdict(list)
    for e in scored:
        by_dataset[e.dataset].append(e)

    table: Dict[str, Dict[str, Dict[str, dict]]] = {}
    for dataset in sorted(by_dataset):
        rows = table.setdefault(dataset, {})
        for level in levels:
            for coefficient in coefficients:
                try:
                    cell = _cell(by_dataset[dataset], level, coefficient)
                except (InsufficientVariance, NoQualifyingGroups) as e:
                    cell = CorrelationCell(n=len(by_dataset[dataset]), error=e.code)
                rows.setdefault(level, {})[coefficient] = cell.model_dump(exclude_none=True)
    table["all"] = {
        level: {c: _cell(scored, level, c).model_dump(exclude_none=True) for c in coefficients}
        for level in levels
    }
    return table
