from typing import Any, Dict

import numpy as np
from scipy.special import softmax

from ..bean.ProtocolModel import ToolParameter
from ..metric.overlap import normalize
from .BaseTool import BaseTool

# 覆盖率 p 映射为 (矛盾, 中立, 蕴含) 的 logits
_SLOPE = 4.0


def overlap_entailment(premise: str, hypothesis: str) -> Dict[str, float]:
    premise_words = set(normalize(premise).split())
    hypothesis_words = normalize(hypothesis).split()
    coverage = (sum(w in premise_words for w in hypothesis_words) / len(hypothesis_words)
                if hypothesis_words else 0.0)
    logits = np.array([_SLOPE * (1.0 - coverage) - 1.0, 2.0, _SLOPE * coverage])
    probs = softmax(logits)
    return {"contradiction": float(probs[0]), "neutral": float(probs[1]), "entailment": float(probs[2])}


class EntailmentTool(BaseTool):
    """基于词汇覆盖率的蕴含判断"""

    op = "entail"

    def __init__(self):
        super().__init__()
        self.description = "判断前提对假设的蕴含、中立、矛盾概率"

    def _get_parameters(self) -> Dict[str, ToolParameter]:
        return {
            "premise": ToolParameter(type="string", description="前提（文档句）"),
            "hypothesis": ToolParameter(type="string", description="假设（摘要句）")
        }

    async def execute(self, premise: str, hypothesis: str) -> Dict[str, Any]:
        return overlap_entailment(premise, hypothesis)
