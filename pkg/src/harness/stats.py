import logging
from collections import defaultdict
from typing import Dict, Mapping, NamedTuple, Optional, Sequence

from ..bean.DomainModel import EvaluationExample
from ..bean.HarnessModel import StatsMismatch, StatsReport

logger = logging.getLogger(__name__)


class DatasetStats(NamedTuple):
    n_valid: int
    n_test: int
    percent_positive: float


# 验证集条数、测试集条数、验证集正类百分比
EXPECTED_STATS: Dict[str, DatasetStats] = {
    "CGS": DatasetStats(1281, 400, 49.7),
    "XSF": DatasetStats(996, 996, 9.4),
    "Polytope": DatasetStats(634, 634, 87.2),
    "FactCC": DatasetStats(931, 503, 85.8),
    "SummEval": DatasetStats(850, 850, 90.6),
    "FRANK": DatasetStats(671, 1575, 33.2),
}

PERCENT_TOLERANCE = 0.05


def observed_stats(examples: Sequence[EvaluationExample]) -> Dict[str, DatasetStats]:
    counts: Dict[str, Dict[str, int]] = defaultdict(lambda: {"valid": 0, "test": 0, "positive": 0})
    for e in examples:
        row = counts[e.dataset]
        row[e.split] += 1
        if e.split == "valid" and e.label == 1:
            row["positive"] += 1
    return {
        name: DatasetStats(row["valid"], row["test"],
                           round(100.0 * row["positive"] / row["valid"], 1) if row["valid"] else 0.0)
        for name, row in sorted(counts.items())
    }


def validate_benchmark_stats(examples: Sequence[EvaluationExample],
                             expected: Optional[Mapping[str, DatasetStats]] = None) -> StatsReport:
    """与已知的数据集规模对比，只报告差异，不中断运行"""
    expected = EXPECTED_STATS if expected is None else expected
    report = StatsReport()
    for name, stats in observed_stats(examples).items():
        report.observed[name] = stats._asdict()
        if name not in expected:
            report.skipped.append(name)
            logger.info(f"数据集 {name} 没有参考统计，跳过校验")
            continue
        reference = expected[name]
        for field in DatasetStats._fields:
            want, got = getattr(reference, field), getattr(stats, field)
            tolerance = PERCENT_TOLERANCE if field == "percent_positive" else 0
            if abs(want - got) > tolerance:
                report.mismatches.append(StatsMismatch(dataset=name, field=field, expected=want, observed=got))
    for mismatch in report.mismatches:
        logger.warning(f"数据集 {mismatch.dataset} 的 {mismatch.field} 为 {mismatch.observed}，"
                       f"参考值 {mismatch.expected}")
    return report
