"""laneattn.log

Console logging plus an optional verbose debug file with size-based rollover,
kept in the usual per-platform log directory.
"""
import logging
import logging.handlers
import os
import sys

_LOGGER_NAME = "laneattn"
_VERBOSE_MAX_BYTES = 5 * 1024 * 1024  # 5 MB simple rollover
_VERBOSE_BACKUPS = 3

_verbose_handler = None


def _verbose_log_file() -> str:
    try:
        if sys.platform == "darwin":
            log_dir = os.path.join(os.path.expanduser("~"), "Library", "Logs", "LaneAttn")
        elif os.name == "nt":
            local = os.environ.get("LOCALAPPDATA") or os.path.join(os.path.expanduser("~"), "AppData", "Local")
            log_dir = os.path.join(local, "LaneAttn")
        else:
            log_dir = os.path.join(os.path.expanduser("~"), ".local", "share", "LaneAttn")
        os.makedirs(log_dir, exist_ok=True)
        return os.path.join(log_dir, "debug.txt")
    except OSError:
        # Fallback to working directory
        return os.path.abspath("laneattn_debug.txt")


def configure_logging(verbose: bool = False, level: int = logging.INFO) -> logging.Logger:
    """Install the stderr handler once and apply the verbose-file setting."""
    logger = logging.getLogger(_LOGGER_NAME)
    consoles = [h for h in logger.handlers if getattr(h, "_laneattn_console", False)]
    for h in consoles:
        # follow a replaced sys.stderr
        h.stream = sys.stderr
    if not consoles:
        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        console.setLevel(level)
        console._laneattn_console = True
        logger.addHandler(console)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False
    set_verbose_logging(verbose)
    return logger


def set_verbose_logging(enabled: bool):
    """Attach or detach the rolling debug file."""
    global _verbose_handler
    logger = logging.getLogger(_LOGGER_NAME)
    if enabled and _verbose_handler is None:
        handler = logging.handlers.RotatingFileHandler(
            _verbose_log_file(), maxBytes=_VERBOSE_MAX_BYTES,
            backupCount=_VERBOSE_BACKUPS, encoding="utf-8", errors="replace",
        )
        handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(message)s",
                                               datefmt="%Y-%m-%d %H:%M:%S"))
        handler.setLevel(logging.DEBUG)
        logger.addHandler(handler)
        _verbose_handler = handler
    elif not enabled and _verbose_handler is not None:
        logger.removeHandler(_verbose_handler)
        _verbose_handler.close()
        _verbose_handler = None


def verbose_log_path() -> str:
    """Where the rolling debug file goes on this platform."""
    return _verbose_log_file()
