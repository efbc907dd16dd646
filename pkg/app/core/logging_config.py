import logging

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(level: str = "INFO") -> logging.Logger:
    """
    Configures the root logger with one stream handler.
    Safe to call more than once: an existing handler is reused.
    """
    root = logging.getLogger()
    root.setLevel(level.upper())
    if not any(getattr(h, "_semisup", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._semisup = True
        root.addHandler(handler)
    return root
