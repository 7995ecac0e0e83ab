"""Omnidirectional multi-view depth estimation with combined spherical sweeping."""

from .errors import ConfigError, EmptyEvaluationError, InvalidArgumentError, TableMismatchError

__version__ = "0.1.0"
