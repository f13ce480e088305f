from pydantic import BaseModel, Field, ConfigDict, model_validator
from typing import List, Any, Optional, Dict, Literal

# ==================== 协议常量 ====================

PROTOCOL_VERSION = "qafe/1"

OPS = ("annotate", "generate_question", "answer", "entail", "overlap")

Op = Literal["annotate", "generate_question", "answer", "entail", "overlap"]


# ==================== 工具定义 ====================

class ToolParameter(BaseModel):
    """工具参数定义"""
    type: str
    description: Optional[str] = None
    enum: Optional[List[str]] = None
    default: Optional[Any] = None


class ToolDefinition(BaseModel):
    """工具定义"""
    name: str
    description: str
    parameters: Dict[str, ToolParameter]
    required: List[str] = []


class ToolCallRequest(BaseModel):
    """工具调用请求"""
    arguments: Dict[str, Any] = Field(default_factory=dict)


class ToolCallResponse(BaseModel):
    """工具调用响应"""
    content: Dict[str, Any]


class ErrorResponse(BaseModel):
    """错误响应"""
    error: str
    details: Optional[Dict[str, Any]] = None


class Handshake(BaseModel):
    """后端握手消息"""
    protocol: str = PROTOCOL_VERSION
    ops: List[str]
    serialized: bool = False
    backend_id: str


# ==================== 各操作的请求体 ====================

class _Payload(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AnnotatePayload(_Payload):
    text: str


class GenerateQuestionPayload(_Payload):
    answer: str
    char_start: int
    char_end: int
    context: str


class AnswerPayload(_Payload):
    question: str
    context: str


class EntailPayload(_Payload):
    premise: str
    hypothesis: str


class OverlapPayload(_Payload):
    question: str
    context: str
    reference: str
    candidate: str


PAYLOAD_MODELS = {
    "annotate": AnnotatePayload,
    "generate_question": GenerateQuestionPayload,
    "answer": AnswerPayload,
    "entail": EntailPayload,
    "overlap": OverlapPayload,
}


# ==================== 各操作的响应体 ====================

class AnnotatedSentenceWire(BaseModel):
    text: str
    char_offset: int
    tokens: List[List[Any]]
    entities: List[List[Any]] = []
    np_chunks: List[List[int]] = []
    dep_heads: List[int]
    dep_labels: List[str]


class AnnotateResponse(BaseModel):
    sentences: List[AnnotatedSentenceWire]


class QuestionResponse(BaseModel):
    question: str


class AnswerResponse(BaseModel):
    answer: str
    answerable_prob: float = Field(ge=0.0, le=1.0)


class EntailResponse(BaseModel):
    contradiction: float = Field(ge=0.0)
    neutral: float = Field(ge=0.0)
    entailment: float = Field(ge=0.0)


class OverlapResponse(BaseModel):
    score: float


RESPONSE_MODELS = {
    "annotate": AnnotateResponse,
    "generate_question": QuestionResponse,
    "answer": AnswerResponse,
    "entail": EntailResponse,
    "overlap": OverlapResponse,
}


class BackendRequest(BaseModel):
    """发往后端的一次请求，payload 必须符合 op 对应的结构"""
    model_config = ConfigDict(frozen=True)

    op: Op
    payload: Dict[str, Any]
    backend_id: str

    @model_validator(mode="after")
    def _check_payload(self):
        PAYLOAD_MODELS[self.op].model_validate(self.payload)
        return self


# ==================== JSON-RPC 信封 ====================

class RpcRequest(BaseModel):
    jsonrpc: str = "2.0"
    id: Optional[Any] = None
    method: str
    params: Dict[str, Any] = Field(default_factory=dict)
