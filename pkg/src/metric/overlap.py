"""
答案重合度指标：文本规范化、EM、词级 F1，以及 LERC / IsAnsweredInput 分发。

规范化采用抽取式问答的通行定义：小写、去标点（Unicode P* 类别）、
去冠词 a/an/the、压缩空白。F1 按词的多重集合计算。
"""
import re
import unicodedata
from collections import Counter
from typing import Dict, TYPE_CHECKING

from ..bean.ConfigModel import OverlapConfig

if TYPE_CHECKING:
    from ..client.BackendRegistry import BackendRegistry

_ARTICLES_RE = re.compile(r"\b(a|an|the)\b", re.UNICODE)


def _remove_punc(text: str) -> str:
    return "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))


def normalize(text: str) -> str:
    text = _remove_punc(text.lower())
    text = _ARTICLES_RE.sub(" ", text)
    return " ".join(text.split())


def exact_match(reference: str, candidate: str) -> int:
    return int(normalize(reference) == normalize(candidate))


def token_f1(reference: str, candidate: str) -> float:
    reference_tokens = normalize(reference).split()
    candidate_tokens = normalize(candidate).split()
    if not reference_tokens and not candidate_tokens:
        return 1.0
    if not reference_tokens or not candidate_tokens:
        return 0.0
    common = Counter(reference_tokens) & Counter(candidate_tokens)
    num_same = sum(common.values())
    if num_same == 0:
        return 0.0
    precision = num_same / len(candidate_tokens)
    recall = num_same / len(reference_tokens)
    return (2 * precision * recall) / (precision + recall)


def rescale_lerc(value: float) -> float:
    """[1, 5] -> [0, 1]"""
    return (value - 1.0) / 4.0


async def score_overlap(
    question: str,
    document: str,
    reference: str,
    candidate: str,
    input_answerable: bool,
    config: OverlapConfig,
    registry: "BackendRegistry",
    lerc_backend_id: str,
) -> Dict[str, float]:
    """计算配置中每个重合度指标的原始值；答案可回答性惩罚由流水线处理"""
    scores: Dict[str, float] = {}
    for metric in config.metrics:
        if metric == "EM":
            scores[metric] = float(exact_match(reference, candidate))
        elif metric == "F1":
            scores[metric] = token_f1(reference, candidate)
        elif metric == "IS_ANSWERED_INPUT":
            scores[metric] = 1.0 if input_answerable else 0.0
        elif metric == "LERC":
            lerc = await registry.lerc_overlap(lerc_backend_id, question, document, reference, candidate)
            scores[metric] = rescale_lerc(lerc.value) if config.lerc_rescale else lerc.value
    return scores
