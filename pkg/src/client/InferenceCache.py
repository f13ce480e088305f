"""
内容寻址的推理缓存。

键 = sha256(backend_id, op, 规范化 payload)，条目文件为
{"key": ..., "request": ..., "response": ...}，写入采用临时文件 + 原子重命名。
读到摘要不一致的条目时将其隔离（重命名为 .corrupt）并按未命中处理。
"""
import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, Optional

from ..bean.Errors import CacheCorruption
from ..bean.ProtocolModel import BackendRequest

logger = logging.getLogger(__name__)


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, ensure_ascii=True, separators=(",", ":"))


def request_identity(request: BackendRequest) -> Dict[str, Any]:
    return {"backend_id": request.backend_id, "op": request.op, "payload": request.payload}


def request_key(request: BackendRequest) -> str:
    return hashlib.sha256(canonical_json(request_identity(request)).encode("utf-8")).hexdigest()


class InferenceCache:
    """文件缓存，多进程并发写安全（最后写入者胜出）"""

    def __init__(self, directory: str):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self.quarantined = 0

    def path_for(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    def _read(self, key: str, path: Path) -> Dict[str, Any]:
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
            stored_key = hashlib.sha256(canonical_json(entry["request"]).encode("utf-8")).hexdigest()
            response = entry["response"]
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise CacheCorruption(f"缓存条目无法解析: {path}") from e
        if entry.get("key") != key or stored_key != key or not isinstance(response, dict):
            raise CacheCorruption(f"缓存条目摘要不一致: {path}")
        return response

    def _quarantine(self, path: Path) -> None:
        target = path.with_suffix(".corrupt")
        try:
            os.replace(path, target)
        except OSError:
            logger.warning(f"隔离缓存条目失败: {path}", exc_info=True)
            return
        self.quarantined += 1
        logger.warning(f"已隔离损坏的缓存条目: {target}")

    def get(self, request: BackendRequest) -> Optional[Dict[str, Any]]:
        key = request_key(request)
        path = self.path_for(key)
        if not path.exists():
            self.misses += 1
            return None
        try:
            response = self._read(key, path)
        except CacheCorruption as e:
            logger.warning(str(e))
            self._quarantine(path)
            self.misses += 1
            return None
        self.hits += 1
        return response

    def put(self, request: BackendRequest, response: Dict[str, Any]) -> None:
        key = request_key(request)
        path = self.path_for(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        entry = {"key": key, "request": request_identity(request), "response": response}
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(canonical_json(entry))
            os.replace(tmp_name, path)
        except BaseException:
            Path(tmp_name).unlink(missing_ok=True)
            raise

    async def cached(
        self,
        request: BackendRequest,
        compute: Callable[[], Awaitable[Dict[str, Any]]],
    ) -> Dict[str, Any]:
        """命中则原样返回；未命中则调用后端、写入并返回"""
        response = self.get(request)
        if response is not None:
            return response
        response = await compute()
        self.put(request, response)
        return response

    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / float(total) if total else 0.0
