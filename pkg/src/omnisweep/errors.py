class InvalidArgumentError(ValueError):
    """An operation received an argument outside its domain."""


class ConfigError(ValueError):
    """A configuration file or object failed validation at a named field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class EmptyEvaluationError(ValueError):
    """No pixel is valid in both the prediction and the ground truth."""


class TableMismatchError(ValueError):
    """A cached mapping table does not belong to the requested rig or grid."""
