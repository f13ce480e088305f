"""
语言学标注约定与四种答案选择策略（NER / NP_CHUNKS / MAX_NP / ALL）。
"""
import logging
from collections import deque
from typing import Dict, List, Sequence, Tuple

from pydantic import ValidationError

from ..bean.DomainModel import AnswerCandidate, AnswerStrategy, SentenceAnnotation
from ..bean.Errors import CyclicParse, EmptyText, MalformedAnnotation
from ..client.BackendRegistry import BackendRegistry

logger = logging.getLogger(__name__)

NOMINAL_TAGS = frozenset({"NOUN", "PROPN", "PRON"})

# ALL 策略合并时的优先级
_PRIORITY = (AnswerStrategy.NER, AnswerStrategy.NP_CHUNKS, AnswerStrategy.MAX_NP)


def is_acyclic(dep_heads: Sequence[int]) -> bool:
    """从任一节点沿父节点上溯都能到达根"""
    n = len(dep_heads)
    for start in range(n):
        node, steps = start, 0
        while node != -1:
            node = dep_heads[node]
            steps += 1
            if steps > n:
                return False
    return True


async def annotate(text: str, registry: BackendRegistry, backend_id: str) -> List[SentenceAnnotation]:
    """调用标注后端并校验结果"""
    if not text or not text.strip():
        raise EmptyText("待标注文本为空")

    wire = await registry.annotate(backend_id, text)
    if not wire:
        raise MalformedAnnotation(f"[{backend_id}] 标注结果没有句子")

    sentences: List[SentenceAnnotation] = []
    cursor = 0
    for index, raw in enumerate(wire):
        try:
            sentence = SentenceAnnotation.model_validate(raw.model_dump())
        except ValidationError as e:
            raise MalformedAnnotation(f"[{backend_id}] 第 {index} 句标注非法: {e}") from e
        start = sentence.char_offset
        if text[start:start + len(sentence.text)] != sentence.text:
            raise MalformedAnnotation(f"[{backend_id}] 第 {index} 句与原文偏移不符")
        if start < cursor or text[cursor:start].strip():
            raise MalformedAnnotation(f"[{backend_id}] 第 {index} 句未按顺序覆盖原文")
        if not is_acyclic(sentence.dep_heads):
            raise MalformedAnnotation(f"[{backend_id}] 第 {index} 句依存结构有环")
        sentences.append(sentence)
        cursor = start + len(sentence.text)
    if text[cursor:].strip():
        raise MalformedAnnotation(f"[{backend_id}] 标注未覆盖文本末尾")
    return sentences


def max_np_spans(sentence: SentenceAnnotation) -> List[Tuple[int, int]]:
    """从根开始广度优先遍历，遇到名词性节点即取其整棵子树的字符跨度且不再深入"""
    heads = sentence.dep_heads
    if not heads:
        return []
    if not is_acyclic(heads):
        raise CyclicParse("依存结构有环")

    children: Dict[int, List[int]] = {i: [] for i in range(len(heads))}
    for i, head in enumerate(heads):
        if head != -1:
            children[head].append(i)

    def subtree(node: int) -> List[int]:
        nodes, stack = [], [node]
        while stack:
            current = stack.pop()
            nodes.append(current)
            stack.extend(children[current])
        return nodes

    spans = []
    queue = deque([heads.index(-1)])
    while queue:
        node = queue.popleft()
        if sentence.tokens[node].pos_tag in NOMINAL_TAGS:
            members = subtree(node)
            spans.append((min(sentence.tokens[m].char_start for m in members),
                          max(sentence.tokens[m].char_end for m in members)))
            continue
        queue.extend(children[node])
    return spans


def _strategy_spans(sentence: SentenceAnnotation, strategy: AnswerStrategy) -> List[Tuple[int, int]]:
    if strategy == AnswerStrategy.NER:
        return [(e.char_start, e.char_end) for e in sentence.entities]
    if strategy == AnswerStrategy.NP_CHUNKS:
        return [tuple(c) for c in sentence.np_chunks]
    return max_np_spans(sentence)


def select_answers(summary: str, annotations: Sequence[SentenceAnnotation],
                   strategy: AnswerStrategy) -> List[AnswerCandidate]:
    """按策略选出答案，按跨度去重并按 (起点, 终点) 排序"""
    strategies = _PRIORITY if strategy == AnswerStrategy.ALL else (strategy,)
    chosen: Dict[Tuple[int, int], AnswerCandidate] = {}
    for tag in strategies:
        for index, sentence in enumerate(annotations):
            for start, end in _strategy_spans(sentence, tag):
                text = summary[start:end]
                if (start, end) in chosen or not text.strip():
                    continue
                chosen[(start, end)] = AnswerCandidate(
                    text=text, char_start=start, char_end=end, sentence_index=index, strategy=tag,
                )
    return [chosen[key] for key in sorted(chosen)]
