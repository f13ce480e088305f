import logging
import math
from typing import Any, Dict, List, Optional, Tuple

from pydantic import ValidationError

from ..bean.ConfigModel import RunConfig
from ..bean.DomainModel import AnswerCandidate, QAResult, LercScore
from ..bean.Errors import (BackendUnavailable, ConfigError, EmptyGeneration, MalformedAnnotation,
                           PreconditionViolation)
from ..bean.ProtocolModel import BackendRequest, RESPONSE_MODELS, AnnotatedSentenceWire
from .BackendClient import BaseBackendClient, create_client
from .InferenceCache import InferenceCache

logger = logging.getLogger(__name__)

# 这些操作的响应不合法时视为标注/概率格式错误，其余视为后端故障
_MALFORMED_OPS = {"annotate", "entail"}


class BackendRegistry:
    """按 backend_id 路由请求，统一做缓存与响应校验"""

    def __init__(self, clients: Dict[str, BaseBackendClient], cache: Optional[InferenceCache] = None,
                 answerability_threshold: float = 0.5):
        self.clients = clients
        self.cache = cache
        self.answerability_threshold = answerability_threshold

    @classmethod
    def from_config(cls, config: RunConfig) -> "BackendRegistry":
        clients = {name: create_client(name, endpoint) for name, endpoint in config.backends.items()}
        cache = InferenceCache(config.cache_dir) if config.cache_dir else None
        return cls(clients, cache, config.pipeline.answerability_threshold)

    def client(self, backend_id: str) -> BaseBackendClient:
        if backend_id not in self.clients:
            raise ConfigError(f"未配置的后端: {backend_id}（已配置: {sorted(self.clients)}）")
        return self.clients[backend_id]

    async def request(self, backend_id: str, op: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        client = self.client(backend_id)
        try:
            request = BackendRequest(op=op, payload=payload, backend_id=backend_id)
        except ValidationError as e:
            raise PreconditionViolation(f"请求体不符合 {op} 的结构: {e}") from e

        async def compute() -> Dict[str, Any]:
            response = await client.request(op, payload)
            self._validate(op, backend_id, response)
            return response

        if self.cache is None:
            return await compute()
        return await self.cache.cached(request, compute)

    @staticmethod
    def _validate(op: str, backend_id: str, response: Dict[str, Any]) -> None:
        try:
            RESPONSE_MODELS[op].model_validate(response)
        except ValidationError as e:
            error = MalformedAnnotation if op in _MALFORMED_OPS else BackendUnavailable
            raise error(f"[{backend_id}] {op} 响应不符合协议: {e}", backend_id=backend_id) from e

    # ==================== 类型化操作 ====================

    async def annotate(self, backend_id: str, text: str) -> List[AnnotatedSentenceWire]:
        response = await self.request(backend_id, "annotate", {"text": text})
        return [AnnotatedSentenceWire.model_validate(s) for s in response["sentences"]]

    async def generate_question(self, backend_id: str, answer: AnswerCandidate, context: str) -> str:
        if context[answer.char_start:answer.char_end] != answer.text:
            raise PreconditionViolation(f"答案 '{answer.text}' 不在上下文偏移处")
        response = await self.request(backend_id, "generate_question", {
            "answer": answer.text,
            "char_start": answer.char_start,
            "char_end": answer.char_end,
            "context": context,
        })
        question = response["question"].strip()
        if not question:
            raise EmptyGeneration(f"[{backend_id}] 生成了空问题: {answer.text}")
        return question

    async def answer_question(self, backend_id: str, question: str, context: str,
                              threshold: Optional[float] = None) -> QAResult:
        if not question.strip() or not context.strip():
            raise PreconditionViolation("问题与上下文均不能为空")
        response = await self.request(backend_id, "answer", {"question": question, "context": context})
        result = QAResult.from_prob(response["answer"], float(response["answerable_prob"]),
                                    self.answerability_threshold if threshold is None else threshold)
        if result.is_answerable and result.answer_text not in context:
            raise MalformedAnnotation(f"[{backend_id}] 可回答的答案不在上下文中: {result.answer_text!r}",
                                      backend_id=backend_id, op="answer")
        return result

    async def entail(self, backend_id: str, premise: str, hypothesis: str) -> Tuple[float, float, float]:
        if not premise.strip() or not hypothesis.strip():
            raise PreconditionViolation("前提与假设均不能为空")
        response = await self.request(backend_id, "entail", {"premise": premise, "hypothesis": hypothesis})
        triple = (float(response["contradiction"]), float(response["neutral"]), float(response["entailment"]))
        if not math.isclose(sum(triple), 1.0, abs_tol=1e-6):
            raise MalformedAnnotation(f"[{backend_id}] 蕴含概率之和不为 1: {triple}", backend_id=backend_id)
        return triple

    async def lerc_overlap(self, backend_id: str, question: str, context: str,
                           reference: str, candidate: str) -> LercScore:
        response = await self.request(backend_id, "overlap", {
            "question": question, "context": context, "reference": reference, "candidate": candidate,
        })
        try:
            return LercScore(value=float(response["score"]))
        except ValidationError as e:
            raise BackendUnavailable(f"[{backend_id}] LERC 分数超出 [1, 5]: {response['score']}") from e

    async def aclose(self) -> None:
        for client in self.clients.values():
            await client.aclose()
