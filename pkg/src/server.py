import asyncio
import logging
import sys
import json
import os

# 将src目录添加到Python路径中
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from contextlib import asynccontextmanager
from typing import List, Any, Dict, Optional

from dotenv import load_dotenv
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.responses import JSONResponse
from pydantic import ValidationError

from src import __version__
from src.bean.Errors import QAFEError, PreconditionViolation
from src.bean.ProtocolModel import (ToolCallResponse, ToolCallRequest, ErrorResponse, ToolDefinition,
                                    Handshake, RpcRequest, PROTOCOL_VERSION)
from src.tools.AnnotateTool import AnnotateTool
from src.tools.EntailmentTool import EntailmentTool
from src.tools.LercOverlapTool import LercOverlapTool
from src.tools.QuestionAnsweringTool import QuestionAnsweringTool
from src.tools.QuestionGenerationTool import QuestionGenerationTool

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configure_logging() -> None:
    """日志统一输出到 stderr，stdio 模式下 stdout 只承载协议消息"""
    load_dotenv()
    logging.basicConfig(
        level=os.getenv("QAFE_LOG_LEVEL", "INFO").upper(),
        format=LOG_FORMAT,
        stream=sys.stderr
    )


# ==================== 后端服务器实现 ====================

class BackendServer:
    """模型后端服务核心类，HTTP 与 stdio 两种通道共用同一套消息体"""

    def __init__(self, backend_id: Optional[str] = None, serialized: Optional[bool] = None):
        self.backend_id = backend_id or os.getenv("QAFE_BACKEND_ID", "heuristic")
        if serialized is None:
            serialized = os.getenv("QAFE_SERIALIZED", "false").lower() == "true"
        self.serialized = serialized
        self.tools = {}
        self._initialize_tools()

    def _initialize_tools(self):
        """初始化所有工具"""
        tool_classes = [
            AnnotateTool,
            QuestionGenerationTool,
            QuestionAnsweringTool,
            EntailmentTool,
            LercOverlapTool
        ]

        for tool_class in tool_classes:
            tool = tool_class()
            self.tools[tool.name] = tool
            logger.debug(f"已注册工具: {tool.name}")

    def handshake(self) -> Handshake:
        return Handshake(
            protocol=PROTOCOL_VERSION,
            ops=list(self.tools),
            serialized=self.serialized,
            backend_id=self.backend_id
        )

    async def list_tools(self) -> List[ToolDefinition]:
        """列出所有可用工具"""
        return [tool.get_definition() for tool in self.tools.values()]

    async def call_tool(self, tool_name: str, arguments: dict) -> Dict[str, Any]:
        """调用特定工具"""
        if tool_name not in self.tools:
            logger.error(f"工具不存在: {tool_name}")
            raise PreconditionViolation(f"工具不存在: {tool_name}")

        tool = self.tools[tool_name]
        tool_def = tool.get_definition()
        missing_params = [p for p in tool_def.required if p not in arguments]
        if missing_params:
            raise PreconditionViolation(f"缺少必需参数: {', '.join(missing_params)}")

        return await tool(arguments)

    def _tool_listing(self, tools: List[ToolDefinition]) -> List[Dict[str, Any]]:
        listing = []
        for tool in tools:
            properties = {}
            for name, param in tool.parameters.items():
                properties[name] = {"type": str(param.type)}
                if param.description:
                    properties[name]["description"] = str(param.description)
                if param.enum:
                    properties[name]["enum"] = [str(e) for e in param.enum]
            listing.append({
                "name": tool.name,
                "description": tool.description,
                "inputSchema": {
                    "type": "object",
                    "properties": properties,
                    "required": tool.required
                }
            })
        return listing

    async def dispatch(self, body: Dict[str, Any]) -> Optional[Dict[str, Any]]:
        """处理一条 JSON-RPC 消息；通知类消息返回 None"""
        request_id = body.get("id") if isinstance(body, dict) else None
        try:
            rpc = RpcRequest.model_validate(body)
            if rpc.method == "initialize":
                result = self.handshake().model_dump()
            elif rpc.method == "tools/list":
                result = {"tools": self._tool_listing(await self.list_tools())}
            elif rpc.method == "tools/call":
                result = {"content": await self.call_tool(rpc.params.get("name"), rpc.params.get("arguments", {}))}
            elif rpc.method == "notifications/initialized":
                return None
            else:
                return _rpc_error(request_id, -32601, f"Method not found: {rpc.method}", "MethodNotFound")
            return {"jsonrpc": "2.0", "id": rpc.id, "result": result}
        except ValidationError as e:
            return _rpc_error(request_id, -32602, str(e), "InvalidParams")
        except PreconditionViolation as e:
            return _rpc_error(request_id, -32602, str(e), e.code)
        except QAFEError as e:
            logger.error(f"执行请求失败: {e}")
            return _rpc_error(request_id, -32603, str(e), e.code)
        except Exception as e:
            logger.error(f"处理 JSON-RPC 请求时出错: {e}", exc_info=True)
            return _rpc_error(request_id, -32603, f"Internal error: {e}", "InternalError")


def _rpc_error(request_id: Any, code: int, message: str, error: str) -> Dict[str, Any]:
    return {
        "jsonrpc": "2.0",
        "id": request_id,
        "error": {"code": code, "message": message, "data": {"error": error}}
    }


# ==================== FastAPI 应用 ====================

@asynccontextmanager
async def lifespan(app: FastAPI):
    """应用生命周期管理"""
    app.state.backend_server = BackendServer()
    logger.info(f"后端服务已初始化，backend_id={app.state.backend_server.backend_id}，"
                f"共加载 {len(app.state.backend_server.tools)} 个工具")

    yield

    logger.info("后端服务关闭")


app = FastAPI(
    title="QAFE 模型后端",
    description="事实一致性评测流水线的模型后端服务（qafe/1 协议）",
    version=__version__,
    lifespan=lifespan
)


# ==================== API 端点 ====================

@app.get("/health")
async def health_check():
    """健康检查端点"""
    return {
        "status": "healthy",
        "service": "qafe-backend",
        "backend_id": app.state.backend_server.backend_id,
        "tools_loaded": len(app.state.backend_server.tools)
    }


@app.get("/tools")
async def list_tools():
    """列出所有可用工具"""
    server = app.state.backend_server
    return server._tool_listing(await server.list_tools())


@app.post("/tools/{tool_name}", response_model=ToolCallResponse)
async def call_tool(tool_name: str, request: ToolCallRequest):
    """调用工具"""
    try:
        content = await app.state.backend_server.call_tool(tool_name, request.arguments)
        return ToolCallResponse(content=content)
    except (PreconditionViolation, ValidationError) as e:
        raise HTTPException(status_code=422, detail=str(e))
    except QAFEError as e:
        logger.error(f"调用工具 {tool_name} 时出错: {e}")
        raise HTTPException(status_code=500, detail=str(e))


@app.get("/tools/{tool_name}/definition")
async def get_tool_definition(tool_name: str):
    """获取特定工具的定义"""
    if tool_name not in app.state.backend_server.tools:
        raise HTTPException(status_code=404, detail=f"工具不存在: {tool_name}")
    return app.state.backend_server.tools[tool_name].get_definition()


@app.post("/")
async def json_rpc_handler(request: Request):
    """处理 JSON-RPC 请求"""
    body_bytes = await request.body()
    try:
        body = json.loads(body_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        return _rpc_error(None, -32700, f"Parse error: {e}", "ParseError")
    response = await app.state.backend_server.dispatch(body)
    if response is None:
        return Response(status_code=204)
    return response


# ==================== 错误处理 ====================

@app.exception_handler(HTTPException)
async def http_exception_handler(request, exc):
    """HTTP 异常处理器"""
    return JSONResponse(
        status_code=exc.status_code,
        content=ErrorResponse(
            error=str(exc.detail),
            details={"path": request.url.path}
        ).model_dump()
    )


# ==================== 主程序入口 ====================

async def serve_stdio(server: BackendServer, reader=None, writer=None) -> None:
    """逐行读取 JSON-RPC 消息并逐行写回响应"""
    reader = reader or sys.stdin
    writer = writer or sys.stdout
    loop = asyncio.get_running_loop()
    while True:
        line = await loop.run_in_executor(None, reader.readline)
        if not line:
            break
        if not line.strip():
            continue
        try:
            body = json.loads(line)
        except json.JSONDecodeError as e:
            response = _rpc_error(None, -32700, f"Parse error: {e}", "ParseError")
        else:
            response = await server.dispatch(body)
        if response is not None:
            writer.write(json.dumps(response, ensure_ascii=False) + "\n")
            writer.flush()


def run_stdio():
    """以STDIO模式运行后端"""
    server = BackendServer()
    logger.info(f"stdio 模式启动，backend_id={server.backend_id}")
    asyncio.run(serve_stdio(server))


if __name__ == "__main__":
    configure_logging()

    if "--stdio" in sys.argv:
        run_stdio()
    else:
        import uvicorn

        uvicorn.run(
            "src.server:app",
            host=os.getenv("QAFE_SERVER_HOST", "0.0.0.0"),
            port=int(os.getenv("QAFE_SERVER_PORT", "8000")),
            log_level=os.getenv("QAFE_LOG_LEVEL", "info").lower()
        )
