"""
命令行入口：python -m src.cli <command> [options]

退出码：0 成功；2 用法 / 配置 / 输入数据错误；3 后端不可用。
每个输出文件都带有 {config_digest, seed, version}，不含时间戳，
相同输入与配置重复运行得到逐字节相同的文件。
"""
import argparse
import asyncio
import logging
import os
import sys
from typing import Any, Awaitable, Callable, Dict, List, Optional, Sequence

import numpy as np

from src import __version__
from src.bean.ConfigModel import PipelineConfig, RunConfig
from src.bean.DomainModel import AnswerStrategy, EvaluationExample, MetricReport
from src.bean.Errors import BackendUnavailable, ConfigError, DegenerateSplit, QAFEError, UnknownComponent
from src.bean.HarnessModel import dump_result
from src.client.BackendRegistry import BackendRegistry
from src.harness import classification, correlation, ingest, stats
from src.metric import combiner, pipeline
from src.server import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_BACKEND = 0, 2, 3

METRICS = ("qafacteval", "zero-shot-nli", "scconv", "qafe-nli")
FILTERING_VARIANTS = {
    "both": {"summ_filter_enabled": True, "answerability_penalty_enabled": True},
    "no_filter": {"summ_filter_enabled": False, "answerability_penalty_enabled": True},
    "no_penalty": {"summ_filter_enabled": True, "answerability_penalty_enabled": False},
    "neither": {"summ_filter_enabled": False, "answerability_penalty_enabled": False},
}
COMPONENTS = ("answer_selection", "question_generation", "question_answering", "answer_overlap", "filtering")


# ==================== 配置 ====================

def parse_backends(values: Optional[Sequence[str]]) -> Optional[Dict[str, str]]:
    if not values:
        return None
    backends = {}
    for value in values:
        name, sep, endpoint = value.partition("=")
        if not sep or not name or not endpoint:
            raise ConfigError(f"--backend 需要 NAME=ENDPOINT 形式: {value}")
        backends[name] = endpoint
    return backends


def load_config(args: argparse.Namespace) -> RunConfig:
    """配置文件 < 命令行；缓存目录依次取 --cache-dir、配置文件、QAFE_CACHE_DIR"""
    config = RunConfig.load(args.config, {
        "backends": parse_backends(args.backend),
        "cache_dir": args.cache_dir,
        "seed": args.seed,
        "parallelism": args.parallelism,
    })
    if config.cache_dir is None and os.getenv("QAFE_CACHE_DIR"):
        config = config.model_copy(update={"cache_dir": os.getenv("QAFE_CACHE_DIR")})
    return config


def run_metadata(config: RunConfig) -> Dict[str, Any]:
    return {"config_digest": config.digest(), "seed": config.seed, "version": __version__}


async def _with_registry(config: RunConfig, work: Callable[[BackendRegistry], Awaitable[Any]]) -> Any:
    registry = BackendRegistry.from_config(config)
    try:
        return await work(registry)
    finally:
        await registry.aclose()
        if registry.cache is not None:
            logger.info(f"缓存命中率 {registry.cache.hit_rate():.2%}（命中 {registry.cache.hits}，"
                        f"未命中 {registry.cache.misses}，隔离 {registry.cache.quarantined}）")


async def _bounded(items: Sequence[Any], parallelism: int, func: Callable[[Any], Awaitable[Any]]) -> List[Any]:
    semaphore = asyncio.Semaphore(parallelism)

    async def run(item):
        async with semaphore:
            return await func(item)

    return list(await asyncio.gather(*(run(item) for item in items)))


# ==================== score ====================

def _score_line(example: EvaluationExample, score: float, report: Optional[MetricReport],
                metric: str, meta: Dict[str, Any]) -> Dict[str, Any]:
    line = {
        "id": example.id,
        "dataset": example.dataset,
        "system": example.system,
        "doc_id": example.doc_id,
        "metric": metric,
        "score": score,
        "degenerate": report.degenerate if report else False,
        "n_scored": report.n_scored if report else None,
    }
    if report is not None and report.error is not None:
        line["error"] = report.error
    line["run"] = meta
    return line


async def score_with_metric(examples: Sequence[EvaluationExample], config: RunConfig, registry: BackendRegistry,
                            metric: str, weights: Optional[combiner.CombinerWeights] = None) -> List[tuple]:
    """按所选指标打分，返回 [(分数, 报告或 None)]，顺序与输入一致"""
    pipeline_config = config.resolved_pipeline()
    if metric == "qafacteval":
        reports = await pipeline.score_examples(examples, pipeline_config, registry)
        return [(report.score, report) for report in reports]
    if metric == "zero-shot-nli":
        async def compute(example):
            return await pipeline.zero_shot_entailment_score(example, registry, pipeline_config.nli_backend_id,
                                                             pipeline_config.annotator_backend_id)
    elif weights is None:
        raise ConfigError(f"指标 {metric} 需要 --weights")
    elif metric == "scconv":
        async def compute(example):
            return await combiner.scconv_example_score(example, weights, pipeline_config, registry)
    else:
        async def compute(example):
            return await combiner.qafe_nli_example_score(example, weights, pipeline_config, registry)

    async def guarded(example):
        try:
            return await compute(example), None
        except (BackendUnavailable, ConfigError):
            raise
        except QAFEError as e:
            logger.warning(f"{example.id}: 打分失败 {e.code}: {e}")
            score = pipeline_config.degenerate_score
            return score, MetricReport(example_id=example.id, score=score, degenerate=True, error=e.to_dict())

    return await _bounded(examples, config.parallelism, guarded)


def cmd_score(args: argparse.Namespace) -> int:
    config = load_config(args)
    examples = ingest.load_examples(args.input)
    weights = combiner.CombinerWeights.load(args.weights) if args.weights else None
    logger.info(f"开始打分: {len(examples)} 条样本，指标 {args.metric}，并发 {config.parallelism}")

    results = asyncio.run(_with_registry(
        config, lambda registry: score_with_metric(examples, config, registry, args.metric, weights)))
    meta = run_metadata(config)
    ingest.write_jsonl(args.output, (
        _score_line(example, score, report, args.metric, meta) for example, (score, report) in zip(examples, results)
    ))
    if args.traces:
        ingest.write_jsonl(args.traces, (
            {"id": example.id, "report": report.model_dump(mode="json"), "run": meta}
            for example, (_, report) in zip(examples, results) if report is not None
        ))
    n_errors = sum(1 for _, report in results if report is not None and report.error is not None)
    logger.info(f"打分完成: {len(results)} 条，其中 {n_errors} 条出错，输出 {args.output}")
    return EXIT_OK


def cmd_extract_features(args: argparse.Namespace) -> int:
    config = load_config(args)
    examples = ingest.load_examples(args.input, require_label=True)
    pipeline_config = config.resolved_pipeline()

    async def work(registry):
        return await _bounded(examples, config.parallelism, lambda e: combiner.extract_features(
            e, pipeline_config, registry, config.combiner.hist))

    records = asyncio.run(_with_registry(config, work))
    ingest.write_jsonl(args.output, (r.model_dump(mode="json", exclude_none=True) for r in records))
    logger.info(f"已写出 {len(records)} 条训练特征: {args.output}")
    return EXIT_OK


# ==================== benchmark ====================

def cmd_benchmark(args: argparse.Namespace) -> int:
    config = load_config(args)
    harness = config.harness
    if args.workers:
        harness = harness.model_copy(update={"workers": args.workers})
    examples = ingest.load_examples(args.input, require_label=True)
    scored = ingest.join_examples(examples, ingest.load_scores(args.scores, harness.higher_is_consistent))
    comparison = None
    if args.significance:
        comparison = ingest.join_examples(examples, ingest.load_scores(args.significance,
                                                                       harness.higher_is_consistent))
    result = classification.benchmark(scored, harness, comparison=comparison, seed=config.seed)
    ingest.write_json(args.output, {"result": dump_result(result), "run": run_metadata(config)})
    logger.info(f"基准平均平衡准确率 {result.benchmark_average:.4f}，输出 {args.output}")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    config = load_config(args)
    report = stats.validate_benchmark_stats(ingest.load_examples(args.input))
    ingest.write_json(args.output, {"result": report.model_dump(mode="json"), "run": run_metadata(config)})
    return EXIT_OK


# ==================== train-combiner ====================

def cmd_train_combiner(args: argparse.Namespace) -> int:
    config = load_config(args)
    settings = config.combiner.training
    if args.seed is not None:
        settings = settings.model_copy(update={"seed": args.seed})
    records = combiner.load_feature_records(args.input)
    meta = run_metadata(config)
    if args.mode == "supervised":
        trained = combiner.train_supervised(records, config.combiner.hist, settings)
        ingest.write_json(args.output, {
            "datasets": {name: weights.model_dump(mode="json") for name, weights in trained.items()},
            "run": meta,
        })
        logger.info(f"已按数据集训练 {len(trained)} 组参数: {', '.join(trained)}")
    else:
        weights = combiner.train_combiner(records, config.combiner.hist, settings)
        weights = weights.model_copy(update={"provenance": {**weights.provenance, "run": meta}})
        weights.save(args.output)
        logger.info(f"验证平衡准确率 {weights.provenance['valid_balanced_accuracy']}，参数已写入 {args.output}")
    return EXIT_OK


# ==================== ablate ====================

def variant_pipeline(base: PipelineConfig, component: str, variant: str, backends: Dict[str, str]) -> PipelineConfig:
    """只替换一个组件，其余保持不变"""
    if component == "answer_selection":
        if variant not in AnswerStrategy.__members__:
            raise UnknownComponent(f"未知的答案选择策略: {variant}")
        return base.model_copy(update={"answer_strategy": AnswerStrategy(variant)})
    if component in ("question_generation", "question_answering"):
        if variant not in backends:
            raise UnknownComponent(f"未配置的后端: {variant}")
        key = "qg_backend_id" if component == "question_generation" else "qa_backend_id"
        return base.model_copy(update={key: variant})
    if component == "answer_overlap":
        if variant not in base.overlap.metrics:
            raise UnknownComponent(f"未知的重合度指标: {variant}")
        return base.model_copy(update={"overlap": base.overlap.model_copy(update={"primary_metric": variant})})
    if component == "filtering":
        if variant not in FILTERING_VARIANTS:
            raise UnknownComponent(f"未知的过滤设置: {variant}")
        return base.model_copy(update=FILTERING_VARIANTS[variant])
    raise UnknownComponent(f"未知的组件: {component}（可选 {', '.join(COMPONENTS)}）")


def default_variants(component: str) -> List[str]:
    if component == "answer_selection":
        return [s.value for s in AnswerStrategy]
    if component == "filtering":
        return list(FILTERING_VARIANTS)
    raise UnknownComponent(f"组件 {component} 需要通过 --variants 指定变体")


async def ablation_table(examples: Sequence[EvaluationExample], config: RunConfig, component: str,
                         variants: Sequence[str], registry: BackendRegistry) -> List[Dict[str, Any]]:
    """每个数据集在验证集上做 80/20 划分：前者选阈值，后者计算平衡准确率"""
    by_dataset: Dict[str, List[EvaluationExample]] = {}
    for example in examples:
        if example.split == "valid":
            by_dataset.setdefault(example.dataset, []).append(example)
    if not by_dataset:
        raise DegenerateSplit("输入中没有验证集样本")
    splits = {name: classification.ablation_split(items, config.seed) for name, items in sorted(by_dataset.items())}

    base = config.resolved_pipeline()
    pipelines = [variant_pipeline(base, component, v, config.backends) for v in variants]
    rows = []
    for variant, variant_config in zip(variants, pipelines):
        cells = {}
        for name, (tune, held_out) in splits.items():
            reports = await pipeline.score_examples([*tune, *held_out], variant_config, registry)
            tune_scores = [r.score for r in reports[:len(tune)]]
            held_scores = [r.score for r in reports[len(tune):]]
            threshold, _ = classification.select_threshold(tune_scores, [e.label for e in tune])
            cells[name] = classification.held_out_accuracy(
                classification.predict(held_scores, threshold), [e.label for e in held_out])
        rows.append({"variant": variant, "datasets": cells, "average": float(np.mean(list(cells.values())))})
        logger.info(f"消融 {component}={variant}: 平均 {rows[-1]['average']:.4f}")
    return rows


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_config(args)
    if args.component not in COMPONENTS:
        raise UnknownComponent(f"未知的组件: {args.component}（可选 {', '.join(COMPONENTS)}）")
    variants = args.variants.split(",") if args.variants else default_variants(args.component)
    examples = ingest.load_examples(args.input, require_label=True)
    rows = asyncio.run(_with_registry(
        config, lambda registry: ablation_table(examples, config, args.component, variants, registry)))
    ingest.write_json(args.output, {"component": args.component, "rows": rows, "run": run_metadata(config)})
    return EXIT_OK


# ==================== correlate ====================

def cmd_correlate(args: argparse.Namespace) -> int:
    config = load_config(args)
    scores = ingest.load_scores(args.scores, config.harness.higher_is_consistent)
    scored = ingest.join_judgments(scores, ingest.load_judgments(args.judgments))
    levels = correlation.LEVELS if args.level == "all" else (args.level,)
    coefficients = tuple(correlation.COEFFICIENTS) if args.coef == "all" else (args.coef,)
    table = correlation.correlation_table(scored, levels, coefficients)
    ingest.write_json(args.output, {"table": table, "run": run_metadata(config)})
    return EXIT_OK


# ==================== 参数解析 ====================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON 文件")
    common.add_argument("--output", required=True, help="输出文件")
    common.add_argument("--backend", action="append", metavar="NAME=ENDPOINT",
                        help="后端端点，可重复：heuristic | scripted:PATH | http://HOST:PORT | stdio:COMMAND")
    common.add_argument("--cache-dir", dest="cache_dir", help="推理缓存目录（默认取 QAFE_CACHE_DIR）")
    common.add_argument("--seed", type=int)
    common.add_argument("--parallelism", type=int)

    parser = argparse.ArgumentParser(prog="qafe", description="基于问答的摘要事实一致性评测")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    score = sub.add_parser("score", parents=[common], help="对样本打分")
    score.add_argument("--input", required=True)
    score.add_argument("--traces", help="逐题轨迹输出文件")
    score.add_argument("--metric", choices=METRICS, default="qafacteval")
    score.add_argument("--weights", help="组合器参数文件（scconv / qafe-nli）")
    score.set_defaults(handler=cmd_score)

    features = sub.add_parser("extract-features", parents=[common], help="生成组合器训练特征")
    features.add_argument("--input", required=True)
    features.set_defaults(handler=cmd_extract_features)

    bench = sub.add_parser("benchmark", parents=[common], help="阈值分类基准评测")
    bench.add_argument("--input", required=True, help="数据集目录或 JSONL 文件")
    bench.add_argument("--scores", required=True)
    bench.add_argument("--significance", help="用于显著性对比的另一份分数文件")
    bench.add_argument("--workers", type=int, help="bootstrap 线程数")
    bench.set_defaults(handler=cmd_benchmark)

    train = sub.add_parser("train-combiner", parents=[common], help="训练组合器")
    train.add_argument("--input", required=True, help="特征 JSONL")
    train.add_argument("--mode", choices=("synthetic", "supervised"), default="synthetic")
    train.set_defaults(handler=cmd_train_combiner)

    ablate = sub.add_parser("ablate", parents=[common], help="组件消融")
    ablate.add_argument("--input", required=True)
    ablate.add_argument("--component", required=True)
    ablate.add_argument("--variants", help="逗号分隔的变体列表")
    ablate.set_defaults(handler=cmd_ablate)

    correlate = sub.add_parser("correlate", parents=[common], help="与人工分数的相关性")
    correlate.add_argument("--scores", required=True)
    correlate.add_argument("--judgments", required=True)
    correlate.add_argument("--level", choices=("instance", "summary", "all"), default="all")
    correlate.add_argument("--coef", choices=("pearson", "spearman", "kendall", "all"), default="all")
    correlate.set_defaults(handler=cmd_correlate)

    check = sub.add_parser("stats", parents=[common], help="核对数据集规模")
    check.add_argument("--input", required=True)
    check.set_defaults(handler=cmd_stats)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except BackendUnavailable as e:
        logger.error(f"后端不可用: {e}", exc_info=True)
        return EXIT_BACKEND
    except QAFEError as e:
        logger.error(f"{e.code}: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
