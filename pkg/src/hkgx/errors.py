"""Exception hierarchy shared by all hkgx modules."""


class HkgxError(Exception):
    """Base class for all toolkit errors."""


class VocabularyError(HkgxError):
    """An id or label does not resolve in its vocabulary."""


class FormatError(HkgxError):
    """A raw input line or record does not match its declared format."""


class ValidationError(HkgxError):
    """Input data violates a structural precondition (reserved labels,
    vocabulary mismatches, inconsistent statistics)."""


class StructureError(HkgxError):
    """A transformed KG does not exhibit the motif structure required
    for recovery."""


class ConfigError(HkgxError):
    """A configuration value is out of range or inconsistent."""


class ShapeError(ConfigError):
    """Tensor operands have incompatible shapes (raised at op
    construction time, never during backward)."""


class NumericError(HkgxError):
    """A non-finite value surfaced during training or optimization."""
