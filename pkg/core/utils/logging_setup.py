"""
Logging for pretraining, capture and matrix runs
Console lines go through tqdm so they do not tear active progress bars
"""
import logging
import os
from logging.handlers import RotatingFileHandler

from tqdm import tqdm

#Environment variables
DEFAULT_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper() #defaults to logging.INFO
DEFAULT_FORMAT = "%(asctime)s %(levelname)s %(processName)s %(name)s: %(message)s" #timestamp - level - process - name - message
DEFAULT_DATEFMT = "%H:%M:%S" #24 hour clock
DEFAULT_LOGFILE = os.getenv("LOG_FILE", "labbench.log") #logging file

#Rotation
MAX_BYTES = 1_000_000
BACKUP_COUNT = 3


class TqdmHandler(logging.Handler):
    """Console handler writing through tqdm.write"""

    def emit(self, record: logging.LogRecord) -> None:
        try:
            tqdm.write(self.format(record))
        except Exception:
            self.handleError(record)


def _as_level(level: str | int) -> int:
    #Unknown names fall back on INFO
    if isinstance(level, str):
        return getattr(logging, level.upper(), logging.INFO)
    return level


def configure(level: str | int = DEFAULT_LEVEL, to_file: bool = False, filename: str = DEFAULT_LOGFILE):
    """
    Configure the root logger once; later calls are no-ops.
    - level: "DEBUG"/"INFO"/... or a numeric level
    - to_file: also write to a rotating log file
    - filename: log file name (default: labbench.log, or $LOG_FILE)
    """
    root = logging.getLogger()
    if root.handlers:
        return

    root.setLevel(_as_level(level))
    formatter = logging.Formatter(DEFAULT_FORMAT, DEFAULT_DATEFMT)

    console = TqdmHandler()
    console.setFormatter(formatter)
    root.addHandler(console)

    if to_file:
        file_handler = RotatingFileHandler(filename, maxBytes=MAX_BYTES, backupCount=BACKUP_COUNT, encoding="utf-8")
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)


def worker_logging(level: str | int) -> None:
    """Pool initializer: spawned workers start with an empty root logger"""
    configure(level=level, to_file=False)


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)
