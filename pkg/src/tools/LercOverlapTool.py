from typing import Any, Dict

from ..bean.ProtocolModel import ToolParameter
from ..metric.overlap import token_f1
from .BaseTool import BaseTool


class LercOverlapTool(BaseTool):
    """答案重合度打分：词级 F1 仿射映射到 [1, 5]"""

    op = "overlap"

    def __init__(self):
        super().__init__()
        self.description = "给定问题与上下文，对候选答案与参考答案的重合度打 1-5 分"

    def _get_parameters(self) -> Dict[str, ToolParameter]:
        return {
            "question": ToolParameter(type="string", description="问题"),
            "context": ToolParameter(type="string", description="上下文"),
            "reference": ToolParameter(type="string", description="参考答案（摘要中选出的答案）"),
            "candidate": ToolParameter(type="string", description="候选答案（问答模型输出），可为空")
        }

    async def execute(self, question: str, context: str, reference: str, candidate: str) -> Dict[str, Any]:
        if not candidate.strip():
            return {"score": 1.0}
        return {"score": 1.0 + 4.0 * token_f1(reference, candidate)}
