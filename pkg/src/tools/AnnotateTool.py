from typing import Any, Dict

from ..bean.ProtocolModel import ToolParameter
from .BaseTool import BaseTool
from .heuristics import annotate_text


class AnnotateTool(BaseTool):
    """规则标注器：分句、分词、词性、名词块、实体、依存"""

    op = "annotate"

    def __init__(self):
        super().__init__()
        self.description = "对文本进行分句与语言学标注"

    def _get_parameters(self) -> Dict[str, ToolParameter]:
        return {
            "text": ToolParameter(
                type="string",
                description="待标注文本"
            )
        }

    async def execute(self, text: str) -> Dict[str, Any]:
        return {"sentences": annotate_text(text)}
