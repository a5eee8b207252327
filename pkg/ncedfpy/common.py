import logging
import sys
from typing import NoReturn

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(filename)s:%(funcName)s %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"


class CedfError(Exception):
    """Base class for all the errors raised by ncedfpy."""


class ConfigError(CedfError, ValueError):
    """A configuration, scenario, dataset or model file is invalid."""


class ControlProjectionError(CedfError):
    """A control vector reached the dynamics without the per-link zero-mean projection."""


class LogPrefixAdaptor(logging.LoggerAdapter):
    def process(self, msg, kwargs):
        return "[%s] %s" % (self.extra["prefix"], msg), kwargs


def logger() -> logging.Logger:
    return logging.getLogger(__package__)


def prefix_logger(prefix) -> LogPrefixAdaptor:
    return LogPrefixAdaptor(logger(), {"prefix": prefix})


def setup_logging(log_level: str) -> None:
    """Attach a single stderr handler to the package logger."""
    log = logger()
    log.setLevel(logging.DEBUG)
    for handler in list(log.handlers):
        log.removeHandler(handler)
    ch = logging.StreamHandler()
    ch.setLevel(log_level.upper())
    ch.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
    log.addHandler(ch)


def fatal(msg: str, code: int = 1) -> NoReturn:
    print("FATAL: %s" % msg, file=sys.stderr)
    sys.exit(code)
