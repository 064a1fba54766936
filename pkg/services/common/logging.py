"""Common logging configuration for the depth sampling tools."""

import logging
import sys
from typing import Any, Dict, Optional

import structlog
from structlog.types import Processor


def setup_logging(level: str = "INFO", fmt: str = "json") -> None:
    """Setup structured logging on standard error.

    Standard output is reserved for command results, so every log line,
    JSON or console, goes to stderr.
    """
    renderer: Processor
    if fmt == "console":
        renderer = structlog.dev.ConsoleRenderer(colors=False)
    else:
        renderer = structlog.processors.JSONRenderer(sort_keys=True)

    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            renderer,
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, level.upper(), logging.INFO),
        force=True,
    )


def get_logger(name: str) -> structlog.stdlib.BoundLogger:
    """Get a structured logger instance."""
    return structlog.get_logger(name)


def log_error(
    logger: structlog.stdlib.BoundLogger,
    error: Exception,
    context: Optional[Dict[str, Any]] = None,
) -> None:
    """Log error with context."""
    error_data: Dict[str, Any] = {
        "error_type": type(error).__name__,
        "error_message": str(error),
    }

    if context:
        error_data.update(context)

    logger.error("Error occurred", **error_data)


def log_performance(
    logger: structlog.stdlib.BoundLogger, operation: str, duration: float, **kwargs: Any
) -> None:
    """Log performance metrics."""
    logger.info(
        "Performance metric",
        operation=operation,
        duration_ms=round(duration * 1000, 2),
        **kwargs,
    )


def log_pipeline_event(
    logger: structlog.stdlib.BoundLogger, stage: str, **kwargs: Any
) -> None:
    """Log a pipeline stage event (counts, parameters, seeds)."""
    logger.info("Pipeline event", event_name=f"pipeline.{stage}", **kwargs)
