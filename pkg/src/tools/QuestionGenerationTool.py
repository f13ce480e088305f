import re
from typing import Any, Dict

from ..bean.Errors import PreconditionViolation
from ..bean.ProtocolModel import ToolParameter
from .BaseTool import BaseTool
from .heuristics import split_sentences

MASK = "<mask>"
CLOZE_PREFIX = "what :"
_TRAILING_PUNCT = re.compile(r"[.!?]+$")


def cloze_question(answer: str, char_start: int, char_end: int, context: str) -> str:
    """把答案在所在句中替换为 <mask>，得到完形填空式问题"""
    if context[char_start:char_end] != answer:
        raise PreconditionViolation(f"答案 '{answer}' 不在上下文偏移 [{char_start}, {char_end}) 处")

    sentence, offset = context, 0
    for text, start in split_sentences(context):
        if start <= char_start and char_end <= start + len(text):
            sentence, offset = text, start
            break

    left = sentence[:char_start - offset].strip()
    right = _TRAILING_PUNCT.sub("", sentence[char_end - offset:].strip()).strip()
    return " ".join(part for part in (CLOZE_PREFIX, left, MASK, right, "?") if part)


class QuestionGenerationTool(BaseTool):
    """完形填空式问题生成"""

    op = "generate_question"

    def __init__(self):
        super().__init__()
        self.description = "根据答案与上下文生成问题"

    def _get_parameters(self) -> Dict[str, ToolParameter]:
        return {
            "answer": ToolParameter(type="string", description="选中的答案文本"),
            "char_start": ToolParameter(type="integer", description="答案在上下文中的起始偏移"),
            "char_end": ToolParameter(type="integer", description="答案在上下文中的结束偏移"),
            "context": ToolParameter(type="string", description="摘要全文")
        }

    async def execute(self, answer: str, char_start: int, char_end: int, context: str) -> Dict[str, Any]:
        return {"question": cloze_question(answer, char_start, char_end, context)}
