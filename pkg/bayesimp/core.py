import sys
import warnings
from contextlib import contextmanager

__all__ = ('BayesImpException', 'ConfigError', 'ParameterError', 'NumericalError',
           'SingularMatrixError', 'DataError', 'context')


class BayesImpException(Exception):
    """Internal exception to report to user"""
    pass


class ConfigError(BayesImpException):
    """An invalid or incomplete run configuration"""
    pass


class ParameterError(BayesImpException, ValueError):
    """An invalid numeric argument"""
    pass


class NumericalError(BayesImpException):
    """A numeric failure during fitting or evaluation"""
    pass


class SingularMatrixError(NumericalError):
    """A Gram matrix could not be factorized even at the maximum jitter"""
    pass


class DataError(BayesImpException):
    """Missing columns or malformed datasets"""
    pass


class _Context:
    def __init__(self):
        self.is_cli = False

    def warn(self, msg):
        if self.is_cli:
            print(msg + "\n", file=sys.stderr)
        else:
            warnings.warn(msg)

    @contextmanager
    def set_cli(self):
        old = self.is_cli
        try:
            self.is_cli = True
            yield
        finally:
            self.is_cli = old


context = _Context()
