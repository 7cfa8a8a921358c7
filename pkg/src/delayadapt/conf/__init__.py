from .logger import log, Logger
from . import errors

__all__ = ["log","Logger","errors"]
