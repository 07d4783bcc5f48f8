import logging, json, sys, time, os


def get_logger(name="promptad", level=None, to_file=None):
    """Structured JSON-line logger shared by every pipeline stage.

    Records go to stderr so that CLI reports on stdout stay machine-readable.
    """
    logger = logging.getLogger(name)
    if level is None:
        level = os.getenv("PROMPTAD_LOG_LEVEL", "INFO").upper()
    logger.setLevel(level)

    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        formatter = logging.Formatter(
            fmt=json.dumps({
                "ts": "%(asctime)s",
                "level": "%(levelname)s",
                "name": "%(name)s",
                "msg": "%(message)s"
            }),
            datefmt="%Y-%m-%dT%H:%M:%SZ",
        )
        formatter.converter = time.gmtime  # UTC
        handler.setFormatter(formatter)
        logger.addHandler(handler)
        logger.propagate = False

        if to_file:
            os.makedirs(os.path.dirname(to_file) or ".", exist_ok=True)
            file_handler = logging.FileHandler(to_file)
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)

    return logger
