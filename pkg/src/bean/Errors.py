# ==================== 错误类型 ====================


class QAFEError(ValueError):
    """所有业务错误的基类，code 为稳定的错误名"""

    code = "QAFEError"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self), "details": self.details}


class MissingField(QAFEError):
    code = "MissingField"


class EmptyText(QAFEError):
    code = "EmptyText"


class ConflictingLabels(QAFEError):
    code = "ConflictingLabels"


class BackendUnavailable(QAFEError):
    code = "BackendUnavailable"


class EmptyGeneration(QAFEError):
    code = "EmptyGeneration"


class MalformedAnnotation(QAFEError):
    code = "MalformedAnnotation"


class AnnotationFailure(QAFEError):
    code = "AnnotationFailure"


class CyclicParse(QAFEError):
    code = "CyclicParse"


class PreconditionViolation(QAFEError):
    code = "PreconditionViolation"


class CacheCorruption(QAFEError):
    code = "CacheCorruption"


class ValueOutOfRange(QAFEError):
    code = "ValueOutOfRange"


class DegenerateLabels(QAFEError):
    code = "DegenerateLabels"


class DegenerateSplit(QAFEError):
    code = "DegenerateSplit"


class MisalignedInputs(QAFEError):
    code = "MisalignedInputs"


class InsufficientVariance(QAFEError):
    code = "InsufficientVariance"


class NoQualifyingGroups(QAFEError):
    code = "NoQualifyingGroups"


class UnknownComponent(QAFEError):
    code = "UnknownComponent"


class ConfigError(QAFEError):
    code = "ConfigError"
