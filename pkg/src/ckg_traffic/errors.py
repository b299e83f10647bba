"""Exception hierarchy. Every error carries a stable ``code`` used by the CLI."""


class CKGError(Exception):
    code = "CKGError"
    exit_code = 1


class ShapeMismatch(CKGError, ValueError):
    code = "ShapeMismatch"


class NonScalarOutput(CKGError, ValueError):
    code = "NonScalarOutput"


class GraphConsumed(CKGError, RuntimeError):
    code = "GraphConsumed"


class NonFiniteValue(CKGError, FloatingPointError):
    code = "NonFiniteValue"


class DuplicateFact(CKGError, ValueError):
    code = "DuplicateFact"


class UnknownId(CKGError, KeyError):
    code = "UnknownId"


class EmptyCity(CKGError, ValueError):
    code = "EmptyCity"


class InsufficientHistory(CKGError, ValueError):
    code = "InsufficientHistory"


class OutOfRange(CKGError, ValueError):
    code = "OutOfRange"


class DegenerateGeometry(CKGError, ValueError):
    code = "DegenerateGeometry"


class TooSmall(CKGError, ValueError):
    code = "TooSmall"


class NonPositiveCovariance(CKGError, ValueError):
    code = "NonPositiveCovariance"


class EmptyGraph(CKGError, ValueError):
    code = "EmptyGraph"


class IndexOutOfRange(CKGError, IndexError):
    code = "IndexOutOfRange"


class UnembeddedEntity(CKGError, KeyError):
    code = "UnembeddedEntity"


class MixedFamilies(CKGError, ValueError):
    code = "MixedFamilies"


class UnnormalizedAttribute(CKGError, ValueError):
    code = "UnnormalizedAttribute"


class HeadDivisibility(CKGError, ValueError):
    code = "HeadDivisibility"


class InsufficientData(CKGError, ValueError):
    code = "InsufficientData"


class ConfigError(CKGError, ValueError):
    code = "ConfigError"
    exit_code = 2


class MissingEmbedding(CKGError, FileNotFoundError):
    code = "MissingEmbedding"
    exit_code = 3


class MissingArtifact(CKGError, FileNotFoundError):
    code = "MissingArtifact"
    exit_code = 4


class DisconnectedNode(CKGError, ValueError):
    code = "DisconnectedNode"
