import re
from typing import Any, Dict, List, Optional, Tuple

from ..bean.ProtocolModel import ToolParameter
from ..metric.overlap import normalize, token_f1
from .BaseTool import BaseTool
from .QuestionGenerationTool import MASK, CLOZE_PREFIX
from .heuristics import split_sentences, word_tokens

MAX_SPAN_WORDS = 12
_CLOZE_RE = re.compile(r"^" + re.escape(CLOZE_PREFIX) + r"\s*(.*?)\s*" + re.escape(MASK) + r"\s*(.*?)\s*\?$", re.S)


def _lower_words(text: str) -> List[str]:
    return [w.lower() for w, _, _ in word_tokens(text)]


def _answer_cloze(left: List[str], right: List[str], context: str) -> Tuple[str, float]:
    """在上下文各句中寻找与问题左右语境最长匹配的片段"""
    best: Optional[Tuple[int, int, str]] = None
    for sentence, offset in split_sentences(context):
        tokens = word_tokens(sentence, offset)
        words = [w.lower() for w, _, _ in tokens]
        m = len(words)
        for i in range(m):
            if not left and i != 0:
                break
            lm = 0
            while lm < i and lm < len(left) and words[i - 1 - lm] == left[-1 - lm]:
                lm += 1
            ends = [m] if not right else range(i + 1, min(m, i + MAX_SPAN_WORDS) + 1)
            for j in ends:
                if j <= i or j - i > MAX_SPAN_WORDS:
                    continue
                rm = 0
                while j + rm < m and rm < len(right) and words[j + rm] == right[rm]:
                    rm += 1
                score = lm + rm
                if best is None or (score, i - j) > (best[0], best[1]):
                    best = (score, i - j, context[tokens[i][1]:tokens[j - 1][2]])
    if best is None:
        return "", 0.0
    denominator = len(left) + len(right)
    return best[2], (best[0] / denominator if denominator else 0.0)


def _answer_free_form(question: str, context: str) -> Tuple[str, float]:
    """非完形问题：取与问题最相近的句子中不在问题里的最长连续词串"""
    question_words = set(normalize(question).split())
    best_sentence, best_offset, best_f1 = None, 0, -1.0
    for sentence, offset in split_sentences(context):
        f1 = token_f1(question, sentence)
        if f1 > best_f1:
            best_sentence, best_offset, best_f1 = sentence, offset, f1
    if best_sentence is None:
        return "", 0.0

    tokens = word_tokens(best_sentence, best_offset)
    best_run: Tuple[int, int] = (0, 0)
    start = None
    for k, (word, _, _) in enumerate(tokens + [("", -1, -1)]):
        normalized = normalize(word)
        novel = k < len(tokens) and (not normalized or normalized not in question_words)
        if novel and start is None:
            start = k
        elif not novel and start is not None:
            if k - start > best_run[1] - best_run[0]:
                best_run = (start, k)
            start = None
    if best_run[1] == best_run[0]:
        return "", 0.0
    answer = context[tokens[best_run[0]][1]:tokens[best_run[1] - 1][2]]
    return answer, max(0.0, min(1.0, best_f1))


class QuestionAnsweringTool(BaseTool):
    """抽取式问答：返回上下文中的片段与可回答概率"""

    op = "answer"

    def __init__(self):
        super().__init__()
        self.description = "基于上下文回答问题"

    def _get_parameters(self) -> Dict[str, ToolParameter]:
        return {
            "question": ToolParameter(type="string", description="问题"),
            "context": ToolParameter(type="string", description="作答所依据的文本")
        }

    async def execute(self, question: str, context: str) -> Dict[str, Any]:
        match = _CLOZE_RE.match(question.strip())
        if match:
            answer, prob = _answer_cloze(_lower_words(match.group(1)), _lower_words(match.group(2)), context)
        else:
            answer, prob = _answer_free_form(question, context)
        return {"answer": answer, "answerable_prob": prob}
