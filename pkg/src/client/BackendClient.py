"""
模型后端客户端。

所有客户端说同一种 JSON-RPC 消息（initialize / tools/call），区别只在通道：
进程内（Local）、HTTP（httpx）、子进程 stdio（逐行 JSON），以及测试用的脚本表（Scripted）。
"""
import asyncio
import itertools
import json
import logging
import shlex
from collections import Counter
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import httpx

from ..bean import Errors
from ..bean.Errors import BackendUnavailable, ConfigError
from ..bean.ProtocolModel import Handshake, PROTOCOL_VERSION

logger = logging.getLogger(__name__)

# 后端回传的错误名中，允许原样重建的类型
_PASSTHROUGH_ERRORS = {
    "PreconditionViolation": Errors.PreconditionViolation,
    "MalformedAnnotation": Errors.MalformedAnnotation,
    "EmptyGeneration": Errors.EmptyGeneration,
}


def _raise_rpc_error(backend_id: str, error: Dict[str, Any]) -> None:
    name = (error.get("data") or {}).get("error", "")
    message = f"[{backend_id}] {error.get('message', '后端返回错误')}"
    raise _PASSTHROUGH_ERRORS.get(name, BackendUnavailable)(message, backend_id=backend_id, rpc_error=name)


class BaseBackendClient:
    """客户端基类：握手、串行模式、调用计数"""

    def __init__(self, backend_id: str):
        self.backend_id = backend_id
        self.calls: Counter = Counter()
        self._handshake: Optional[Handshake] = None
        self._lock: Optional[asyncio.Lock] = None
        self._init_lock: Optional[asyncio.Lock] = None
        self._id_counter = itertools.count(1)

    async def _rpc(self, method: str, params: Dict[str, Any]) -> Dict[str, Any]:
        """发送一条 JSON-RPC 消息并返回 result（子类实现）"""
        raise NotImplementedError

    def _message(self, method: str, params: Dict[str, Any]) -> Dict[str, Any]:
        return {"jsonrpc": "2.0", "id": next(self._id_counter), "method": method, "params": params}

    def _unwrap(self, reply: Dict[str, Any]) -> Dict[str, Any]:
        if "error" in reply:
            _raise_rpc_error(self.backend_id, reply["error"])
        if not isinstance(reply.get("result"), dict):
            raise BackendUnavailable(f"[{self.backend_id}] 响应缺少 result", backend_id=self.backend_id)
        return reply["result"]

    async def handshake(self) -> Handshake:
        if self._handshake is not None:
            return self._handshake
        if self._init_lock is None:
            self._init_lock = asyncio.Lock()
        async with self._init_lock:
            if self._handshake is not None:
                return self._handshake
            try:
                handshake = Handshake.model_validate(await self._rpc("initialize", {}))
            except ValueError as e:
                if isinstance(e, Errors.QAFEError):
                    raise
                raise BackendUnavailable(f"[{self.backend_id}] 握手消息无效: {e}") from e
            if handshake.protocol != PROTOCOL_VERSION:
                raise BackendUnavailable(f"[{self.backend_id}] 协议版本不兼容: {handshake.protocol}")
            # 串行锁只创建一次，并在发布握手结果之前就位
            if handshake.serialized and self._lock is None:
                self._lock = asyncio.Lock()
            self._handshake = handshake
            logger.info(f"后端 {self.backend_id} 握手完成: ops={handshake.ops}, serialized={handshake.serialized}")
        return self._handshake

    async def request(self, op: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        handshake = await self.handshake()
        if op not in handshake.ops:
            raise BackendUnavailable(f"[{self.backend_id}] 不支持操作: {op}", backend_id=self.backend_id, op=op)
        self.calls[op] += 1
        if self._lock is not None:
            async with self._lock:
                result = await self._rpc("tools/call", {"name": op, "arguments": payload})
        else:
            result = await self._rpc("tools/call", {"name": op, "arguments": payload})
        content = result.get("content")
        if not isinstance(content, dict):
            raise BackendUnavailable(f"[{self.backend_id}] 响应缺少 content", backend_id=self.backend_id)
        return content

    @property
    def total_calls(self) -> int:
        return sum(self.calls.values())

    async def aclose(self) -> None:
        pass


class LocalBackendClient(BaseBackendClient):
    """进程内调用启发式后端"""

    def __init__(self, backend_id: str = "heuristic", server=None):
        super().__init__(backend_id)
        if server is None:
            from ..server import BackendServer
            server = BackendServer(backend_id=backend_id, serialized=False)
        self.server = server

    async def _rpc(self, method: str, params: Dict[str, Any]) -> Dict[str, Any]:
        reply = await self.server.dispatch(self._message(method, params))
        return self._unwrap(reply)


class HttpBackendClient(BaseBackendClient):
    """通过 HTTP JSON-RPC 访问后端"""

    def __init__(self, backend_id: str, endpoint: str, timeout: float = 60.0,
                 transport: Optional[httpx.AsyncBaseTransport] = None):
        super().__init__(backend_id)
        self.endpoint = endpoint.rstrip("/")
        self._client = httpx.AsyncClient(base_url=self.endpoint, timeout=timeout, transport=transport)

    async def _rpc(self, method: str, params: Dict[str, Any]) -> Dict[str, Any]:
        try:
            response = await self._client.post("/", json=self._message(method, params))
            response.raise_for_status()
            reply = response.json()
        except (httpx.HTTPError, json.JSONDecodeError) as e:
            raise BackendUnavailable(f"[{self.backend_id}] 无法访问 {self.endpoint}: {e}",
                                     backend_id=self.backend_id) from e
        return self._unwrap(reply)

    async def aclose(self) -> None:
        await self._client.aclose()


class StdioBackendClient(BaseBackendClient):
    """启动子进程，通过 stdin/stdout 逐行收发 JSON"""

    def __init__(self, backend_id: str, command: Union[str, List[str]]):
        super().__init__(backend_id)
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self._process: Optional[asyncio.subprocess.Process] = None
        self._io_lock: Optional[asyncio.Lock] = None

    async def _ensure_process(self) -> asyncio.subprocess.Process:
        if self._process is None or self._process.returncode is not None:
            try:
                self._process = await asyncio.create_subprocess_exec(
                    *self.command,
                    stdin=asyncio.subprocess.PIPE,
                    stdout=asyncio.subprocess.PIPE,
                    limit=16 * 1024 * 1024,
                )
            except OSError as e:
                raise BackendUnavailable(f"[{self.backend_id}] 无法启动后端进程 {self.command}: {e}",
                                         backend_id=self.backend_id) from e
        return self._process

    async def _rpc(self, method: str, params: Dict[str, Any]) -> Dict[str, Any]:
        if self._io_lock is None:
            self._io_lock = asyncio.Lock()
        message = self._message(method, params)
        async with self._io_lock:
            process = await self._ensure_process()
            try:
                process.stdin.write((json.dumps(message, ensure_ascii=False) + "\n").encode("utf-8"))
                await process.stdin.drain()
                line = await process.stdout.readline()
            except (OSError, ConnectionError) as e:
                raise BackendUnavailable(f"[{self.backend_id}] stdio 通道中断: {e}", backend_id=self.backend_id) from e
        if not line:
            raise BackendUnavailable(f"[{self.backend_id}] 后端进程已退出", backend_id=self.backend_id)
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as e:
            raise BackendUnavailable(f"[{self.backend_id}] 无法解析后端输出: {e}", backend_id=self.backend_id) from e
        if reply.get("id") != message["id"]:
            raise BackendUnavailable(f"[{self.backend_id}] 响应 id 不匹配", backend_id=self.backend_id)
        return self._unwrap(reply)

    async def aclose(self) -> None:
        if self._process is not None and self._process.returncode is None:
            self._process.stdin.close()
            try:
                await asyncio.wait_for(self._process.wait(), timeout=5)
            except asyncio.TimeoutError:
                self._process.kill()
                await self._process.wait()


class ScriptedBackendClient(BaseBackendClient):
    """按脚本表回放固定响应，用于复现固定示例与测试

    脚本表格式：{"backend_id": str, "serialized": bool,
                 "responses": {op: [{"when": {...}, "response": {...}}]}}
    when 中的每个键都必须与请求体中的同名字段相等才算命中。
    """

    def __init__(self, table: Dict[str, Any], backend_id: Optional[str] = None):
        super().__init__(backend_id or table.get("backend_id", "scripted"))
        self.responses: Dict[str, List[Dict[str, Any]]] = table.get("responses", {})
        self.serialized = bool(table.get("serialized", False))

    @classmethod
    def from_file(cls, path: Union[str, Path], backend_id: Optional[str] = None) -> "ScriptedBackendClient":
        try:
            table = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"无法读取脚本表 {path}: {e}") from e
        return cls(table, backend_id)

    async def _rpc(self, method: str, params: Dict[str, Any]) -> Dict[str, Any]:
        if method == "initialize":
            return Handshake(ops=list(self.responses), serialized=self.serialized,
                             backend_id=self.backend_id).model_dump()
        op, payload = params["name"], params.get("arguments", {})
        entries = self.responses.get(op) or []
        if not entries:
            raise BackendUnavailable(f"[{self.backend_id}] 脚本表中没有 {op} 的条目", backend_id=self.backend_id, op=op)
        for entry in entries:
            if all(payload.get(key) == value for key, value in entry.get("when", {}).items()):
                return {"content": entry["response"]}
        raise BackendUnavailable(f"[{self.backend_id}] 脚本表未命中 {op}: {payload}", backend_id=self.backend_id, op=op)


def create_client(name: str, endpoint: str) -> BaseBackendClient:
    """按端点语法创建客户端：heuristic | scripted:PATH | http(s)://... | stdio:COMMAND"""
    if endpoint == "heuristic":
        return LocalBackendClient(backend_id=name)
    if endpoint.startswith("scripted:"):
        return ScriptedBackendClient.from_file(endpoint[len("scripted:"):], backend_id=name)
    if endpoint.startswith(("http://", "https://")):
        return HttpBackendClient(name, endpoint)
    if endpoint.startswith("stdio:"):
        return StdioBackendClient(name, endpoint[len("stdio:"):])
    raise ConfigError(f"无法识别的后端端点: {name}={endpoint}")
