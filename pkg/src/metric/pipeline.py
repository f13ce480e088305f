"""
QAFactEval 端到端打分，以及句级蕴含指标使用的零样本聚合。

每个问题的流程：生成问题 -> 用摘要作答（IsAnsweredSumm 过滤，含 F1 阈值）
-> 用原文作答 -> 原文不可回答且启用惩罚时所有重合度记为 penalty_value，
否则计算原始重合度。示例得分为主指标在保留问题上的均值。
"""
import asyncio
import logging
from typing import List, Optional, Sequence

import numpy as np

from ..bean.ConfigModel import PipelineConfig
from ..bean.DomainModel import (AnswerCandidate, EntailmentMatrix, EvaluationExample, MetricReport,
                                QAResult, QuestionRecord)
from ..bean.Errors import (AnnotationFailure, BackendUnavailable, CyclicParse, EmptyGeneration, EmptyText,
                           MalformedAnnotation, QAFEError, ConfigError)
from ..client.BackendRegistry import BackendRegistry
from .annotation import annotate, select_answers
from .overlap import score_overlap, token_f1

logger = logging.getLogger(__name__)


async def _answer(question: str, context: str, config: PipelineConfig, registry: BackendRegistry) -> QAResult:
    result = await registry.answer_question(config.qa_backend_id, question, context,
                                            threshold=config.answerability_threshold)
    verdict_backend = config.answerability_backend_id
    if verdict_backend and verdict_backend != config.qa_backend_id:
        verdict = await registry.answer_question(verdict_backend, question, context,
                                                 threshold=config.answerability_threshold)
        return QAResult(answer_text=result.answer_text, answerable_prob=verdict.answerable_prob,
                        is_answerable=verdict.is_answerable)
    return result


async def trace_question(answer: AnswerCandidate, example: EvaluationExample, config: PipelineConfig,
                         registry: BackendRegistry) -> QuestionRecord:
    """单个答案的完整轨迹"""
    try:
        question = await registry.generate_question(config.qg_backend_id, answer, example.summary)
    except EmptyGeneration:
        logger.debug(f"{example.id}: 答案 '{answer.text}' 生成了空问题，已过滤")
        return QuestionRecord(answer=answer, question="", filtered=True)

    summ = await _answer(question, example.summary, config, registry)
    summ_f1 = token_f1(answer.text, summ.answer_text)
    filtered = config.summ_filter_enabled and (not summ.is_answerable or summ_f1 < config.summ_f1_threshold)
    record = dict(answer=answer, question=question, summ_answerable=summ.is_answerable,
                  summ_answer=summ.answer_text, summ_f1=summ_f1, filtered=filtered)
    if filtered:
        return QuestionRecord(**record)

    inp = await _answer(question, example.document, config, registry)
    penalty = config.answerability_penalty_enabled and not inp.is_answerable
    if penalty:
        overlap_scores = {metric: config.penalty_value for metric in config.overlap.metrics}
    else:
        overlap_scores = await score_overlap(question, example.document, answer.text, inp.answer_text,
                                             inp.is_answerable, config.overlap, registry, config.lerc_backend_id)
    return QuestionRecord(**record, input_answerable=inp.is_answerable, input_answer=inp.answer_text,
                          overlap_scores=overlap_scores, penalty_applied=penalty)


async def score_example(example: EvaluationExample, config: PipelineConfig,
                        registry: BackendRegistry) -> MetricReport:
    """对单个示例打分"""
    try:
        annotations = await annotate(example.summary, registry, config.annotator_backend_id)
        answers = select_answers(example.summary, annotations, config.answer_strategy)
        records = await asyncio.gather(*(trace_question(a, example, config, registry) for a in answers))
    except BackendUnavailable as e:
        raise BackendUnavailable(f"{example.id}: {e}", **{**e.details, "example_id": example.id}) from e
    except (MalformedAnnotation, CyclicParse, EmptyText) as e:
        raise AnnotationFailure(f"{example.id}: 摘要标注失败: {e}", example_id=example.id) from e

    primary = config.overlap.primary_metric
    kept = [r.overlap_scores[primary] for r in records if not r.filtered]
    degenerate = not kept
    score = config.degenerate_score if degenerate else float(np.mean(kept))
    if degenerate:
        logger.info(f"{example.id}: 无保留问题（选出 {len(answers)} 个答案），得分记为 {score}")
    return MetricReport(example_id=example.id, score=score, questions=list(records), n_selected=len(answers),
                        n_scored=len(kept), degenerate=degenerate)


async def score_examples(examples: Sequence[EvaluationExample], config: PipelineConfig,
                         registry: BackendRegistry) -> List[MetricReport]:
    """并发打分（上限 parallelism），按输入顺序返回；非后端错误记为单条错误报告"""
    semaphore = asyncio.Semaphore(config.parallelism)

    async def run(example: EvaluationExample) -> MetricReport:
        async with semaphore:
            try:
                return await score_example(example, config, registry)
            except (BackendUnavailable, ConfigError):
                raise
            except QAFEError as e:
                logger.warning(f"{example.id}: 打分失败 {e.code}: {e}")
                return MetricReport(example_id=example.id, score=config.degenerate_score, degenerate=True,
                                    error=e.to_dict())

    return list(await asyncio.gather(*(run(example) for example in examples)))


def report_score_vector(report: MetricReport, config: PipelineConfig) -> List[float]:
    primary = config.overlap.primary_metric
    return [r.overlap_scores[primary] for r in report.questions if not r.filtered]


async def answer_score_vector(example: EvaluationExample, config: PipelineConfig,
                              registry: BackendRegistry) -> List[float]:
    """保留问题的主指标得分序列，长度 K = n_scored"""
    return report_score_vector(await score_example(example, config, registry), config)


def record_violations(record: QuestionRecord, config: PipelineConfig) -> List[str]:
    """检查单条轨迹是否满足过滤与惩罚的约束，返回违例描述"""
    violations = []
    if config.summ_filter_enabled and record.question:
        expected = (not record.summ_answerable) or record.summ_f1 < config.summ_f1_threshold
        if record.filtered != expected:
            violations.append("filtered 与 IsAnsweredSumm / F1 阈值不一致")
    expected_penalty = config.answerability_penalty_enabled and not record.filtered and not record.input_answerable
    if record.penalty_applied != expected_penalty:
        violations.append("penalty_applied 与原文可回答性不一致")
    if record.penalty_applied and any(v != config.penalty_value for v in record.overlap_scores.values()):
        violations.append("惩罚生效时存在非惩罚值的重合度")
    return violations


# ==================== 蕴含聚合 ====================

async def entailment_matrix(example: EvaluationExample, registry: BackendRegistry, nli_backend_id: str,
                            annotator_backend_id: str) -> EntailmentMatrix:
    """文档句 × 摘要句 的蕴含矩阵，每对句子调用一次后端"""
    try:
        doc_sentences = [s.text for s in await annotate(example.document, registry, annotator_backend_id)]
        summ_sentences = [s.text for s in await annotate(example.summary, registry, annotator_backend_id)]
    except (MalformedAnnotation, EmptyText) as e:
        raise AnnotationFailure(f"{example.id}: 分句失败: {e}", example_id=example.id) from e
    triples = await asyncio.gather(*(
        registry.entail(nli_backend_id, premise, hypothesis)
        for premise in doc_sentences for hypothesis in summ_sentences
    ))
    width = len(summ_sentences)
    return EntailmentMatrix(values=[list(triples[i * width:(i + 1) * width]) for i in range(len(doc_sentences))])


def max_support_score(matrix: EntailmentMatrix) -> float:
    """每个摘要句取各文档句蕴含概率的最大值，再对摘要句求均值"""
    values = np.asarray(matrix.values, dtype=float)[:, :, 2]
    return float(values.max(axis=0).mean())


async def zero_shot_entailment_score(example: EvaluationExample, registry: BackendRegistry,
                                     nli_backend_id: str, annotator_backend_id: Optional[str] = None) -> float:
    matrix = await entailment_matrix(example, registry, nli_backend_id, annotator_backend_id or nli_backend_id)
    return max_support_score(matrix)
