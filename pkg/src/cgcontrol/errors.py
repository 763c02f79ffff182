"""Exception hierarchy shared by all modules."""


class CGError(Exception):
    """Base class for every error raised by cgcontrol."""


class StructuralError(CGError):
    """The network graph is malformed (cycle, dangling parent, ...)."""


class ArgumentError(CGError, ValueError):
    """A caller passed an unknown node, a bad state index or similar."""


class DomainError(CGError):
    """Potential domains cannot be aligned."""


class UndefinedDivisionError(CGError):
    """Division by a void configuration with a non-void numerator."""


class NumericalError(CGError):
    """A precision matrix stayed singular after the floor repair."""


class InconsistentEvidenceError(CGError):
    """The evidence has zero likelihood under the model."""


class CapacityError(CGError):
    """Too many discrete configurations to enumerate."""


class StaleModelError(CGError):
    """A compiled model does not match the network/evidence it is used with."""


class SchemaError(CGError):
    """A JSON document does not follow the documented schema."""
