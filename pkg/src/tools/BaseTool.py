# ==================== 工具基类 ====================
from typing import List, Any, Optional, Dict

from ..bean.ProtocolModel import ToolDefinition, ToolParameter, PAYLOAD_MODELS, RESPONSE_MODELS


class BaseTool:
    """工具基类，每个工具对应一个协议操作"""

    op: str = ""

    def __init__(self):
        self.name = self.op or self.__class__.__name__.replace('Tool', '').lower()
        self.description = getattr(self, 'description', 'No description provided')

    async def execute(self, **kwargs) -> Dict[str, Any]:
        """执行工具"""
        raise NotImplementedError

    async def __call__(self, payload: Dict[str, Any]) -> Dict[str, Any]:
        """校验请求体、执行并校验响应体"""
        arguments = PAYLOAD_MODELS[self.name].model_validate(payload).model_dump()
        result = await self.execute(**arguments)
        return RESPONSE_MODELS[self.name].model_validate(result).model_dump()

    def get_definition(self) -> ToolDefinition:
        """获取工具定义"""
        return ToolDefinition(
            name=self.name,
            description=self.description,
            parameters=self._get_parameters(),
            required=self._get_required_parameters()
        )

    def _get_parameters(self) -> Dict[str, ToolParameter]:
        """获取参数定义（子类覆盖）"""
        return {}

    def _get_required_parameters(self) -> List[str]:
        """默认所有参数均为必需"""
        return list(self._get_parameters())
