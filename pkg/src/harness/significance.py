"""
配对 bootstrap 显著性检验（平衡准确率之差），含 Bonferroni 校正。

第 r 次重采样使用以 (seed, r) 为键的 Philox 计数器随机流，
因此结果与线程数、分块方式无关。
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

from ..bean.Errors import ConfigError, DegenerateLabels, MisalignedInputs, PreconditionViolation
from ..bean.HarnessModel import BootstrapInterval, SignificanceResult
from .classification import balanced_accuracy, predict, select_threshold

logger = logging.getLogger(__name__)

MIN_RESAMPLES = 1000
MAX_REDRAWS = 1000
MAX_SEED = 2 ** 64 - 1


def _check_seed(seed: int) -> None:
    # Philox 的 128 位键由 (seed, 重采样序号) 拼成
    if not 0 <= seed <= MAX_SEED:
        raise ConfigError(f"随机种子必须在 [0, 2^64) 内: {seed}")


def resample_generator(seed: int, index: int) -> np.random.Generator:
    _check_seed(seed)
    return np.random.Generator(np.random.Philox(key=(seed << 64) | index))


def _bacc(predicted: np.ndarray, actual: np.ndarray) -> float:
    n_pos = int(actual.sum())
    n_neg = actual.size - n_pos
    tp = int(np.sum(predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    return (tp * n_neg + tn * n_pos) / (2 * n_pos * n_neg)


def _resample_differences(pred_a: np.ndarray, pred_b: np.ndarray, actual: np.ndarray,
                          seed: int, start: int, stop: int) -> np.ndarray:
    n = actual.size
    diffs = np.empty(stop - start)
    for offset, r in enumerate(range(start, stop)):
        rng = resample_generator(seed, r)
        for _ in range(MAX_REDRAWS):
            idx = rng.integers(0, n, size=n)
            sample = actual[idx]
            if sample.any() and not sample.all():
                break
        else:
            raise DegenerateLabels(f"第 {r} 次重采样始终只有一个类别")
        diffs[offset] = _bacc(pred_a[idx], sample) - _bacc(pred_b[idx], sample)
    return diffs


def bootstrap_differences(pred_a: np.ndarray, pred_b: np.ndarray, actual: np.ndarray, resamples: int,
                          seed: int = 0, workers: int = 1) -> np.ndarray:
    """各次重采样的平衡准确率差值，按重采样序号排列"""
    _check_seed(seed)
    bounds = np.linspace(0, resamples, num=max(1, workers) + 1, dtype=int)
    chunks = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    if workers <= 1:
        parts = [_resample_differences(pred_a, pred_b, actual, seed, lo, hi) for lo, hi in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _resample_differences(pred_a, pred_b, actual, seed, *c), chunks))
    return np.concatenate(parts)


def bootstrap_compare(scores_a: Sequence[float], scores_b: Sequence[float], labels: Sequence[int],
                      threshold_a: Optional[float] = None, threshold_b: Optional[float] = None,
                      resamples: int = 10000, levels: Sequence[float] = (0.05, 0.01), n_comparisons: int = 1,
                      seed: int = 0, workers: int = 1) -> SignificanceResult:
    """
    比较指标 A 与 B 在同一测试集上的平衡准确率。

    未给出阈值时在传入数据上各自选择。每个显著性水平先除以同时比较的数据集数
    （Bonferroni），再取双侧百分位区间；区间不含 0 即判为显著。
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    actual = np.asarray(labels)
    if not (a.shape == b.shape == actual.shape):
        raise MisalignedInputs(f"输入长度不一致: {a.shape}, {b.shape}, {actual.shape}")
    if resamples < MIN_RESAMPLES:
        raise PreconditionViolation(f"resamples 至少为 {MIN_RESAMPLES}")
    if n_comparisons < 1:
        raise PreconditionViolation("n_comparisons 至少为 1")
    if threshold_a is None:
        threshold_a, _ = select_threshold(a, actual)
    if threshold_b is None:
        threshold_b, _ = select_threshold(b, actual)

    pred_a, pred_b = predict(a, threshold_a), predict(b, threshold_b)
    bacc_a, bacc_b = balanced_accuracy(pred_a, actual), balanced_accuracy(pred_b, actual)
    actual = actual.astype(bool)
    diffs = bootstrap_differences(pred_a, pred_b, actual, resamples, seed=seed, workers=workers)

    intervals = []
    for level in levels:
        corrected = level / n_comparisons
        lower, upper = np.percentile(diffs, [100 * corrected / 2, 100 * (1 - corrected / 2)])
        intervals.append(BootstrapInterval(level=level, corrected_level=corrected, lower=float(lower),
                                           upper=float(upper), significant=bool(lower > 0 or upper < 0)))
    logger.debug(f"bootstrap 完成: 差值 {bacc_a - bacc_b:.4f}，{resamples} 次重采样")
    return SignificanceResult(
        observed_difference=bacc_a - bacc_b, balanced_accuracy_a=bacc_a, balanced_accuracy_b=bacc_b,
        threshold_a=threshold_a, threshold_b=threshold_b, resamples=resamples, n_comparisons=n_comparisons,
        seed=seed, intervals=intervals,
    )
