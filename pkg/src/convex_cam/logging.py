from datetime import datetime
from functools import lru_cache
from pathlib import Path
from types import ModuleType
from typing import Any, ClassVar, Iterable, List, Optional, Type, Union

from rich._log_render import FormatTimeCallable, LogRender
from rich.console import Console, ConsoleRenderable
from rich.highlighter import Highlighter, ReprHighlighter
from rich.text import Text
from rich.traceback import Traceback

try:
    import picologging as logging
    from picologging.config import dictConfig
except ImportError:  # pragma: no cover
    import logging  # type: ignore[no-redef]
    from logging.config import dictConfig

__all__ = [
    "RichPicologgingHandler",
    "configure_logging",
    "get_logger",
    "log_config",
]


class RichPicologgingHandler(logging.Handler):  # type: ignore
    """A logging handler that renders output with Rich. The time / level / message and file are displayed in columns.
    The level is color coded, and the message is syntax highlighted.

    Args:
        level (Union[int, str], optional): Log level. Defaults to logging.NOTSET.
        console (:class:`~rich.console.Console`, optional): Optional console instance to write logs.
            Default will use a global console instance writing to stderr.
        show_time (bool, optional): Show a column for the time. Defaults to True.
        show_level (bool, optional): Show a column for the level. Defaults to True.
        show_path (bool, optional): Show the path to the original log call. Defaults to True.
        highlighter (Highlighter, optional): Highlighter to style log messages,
         or None to use ReprHighlighter. Defaults to None.
        rich_tracebacks (bool, optional): Enable rich tracebacks with syntax
         highlighting and formatting. Defaults to False.
        keywords (List[str], optional): List of words to highlight instead of ``KEYWORDS``.
    """

    KEYWORDS: ClassVar[Optional[List[str]]] = [
        "Converged",
        "Infeasible",
        "MaxIterations",
        "Optimal",
        "PrimalInfeasible",
        "DualInfeasible",
        "NumericalFailure",
        "AlreadySafe",
    ]
    HIGHLIGHTER_CLASS: ClassVar[Type[Highlighter]] = ReprHighlighter

    def __init__(
        self,
        level: Union[int, str] = logging.NOTSET,
        console: Optional[Console] = None,
        *,
        show_time: bool = True,
        show_level: bool = True,
        show_path: bool = True,
        highlighter: Optional[Highlighter] = None,
        rich_tracebacks: bool = False,
        tracebacks_suppress: Iterable[Union[str, ModuleType]] = (),
        log_time_format: Union[str, FormatTimeCallable] = "[%X]",
        keywords: Optional[List[str]] = None,
    ) -> None:
        super().__init__(level=level)
        self.console = console if console is not None else Console(stderr=True)
        self.highlighter = highlighter or self.HIGHLIGHTER_CLASS()
        self._log_render = LogRender(
            show_time=show_time,
            show_level=show_level,
            show_path=show_path,
            time_format=log_time_format,
            omit_repeated_times=True,
            level_width=None,
        )
        self.rich_tracebacks = rich_tracebacks
        self.tracebacks_suppress = tracebacks_suppress
        self.keywords = keywords

    def get_level_text(self, record: logging.LogRecord) -> Text:
        """Get the level name from the record."""
        level_name = record.levelname
        return Text.styled(level_name.ljust(8), f"logging.level.{level_name.lower()}")

    def emit(self, record: logging.LogRecord) -> None:
        """Invoked by logging."""
        message = self.format(record)
        traceback = None
        if self.rich_tracebacks and record.exc_info and record.exc_info != (None, None, None):
            exc_type, exc_value, exc_traceback = record.exc_info
            assert exc_type is not None
            assert exc_value is not None
            traceback = Traceback.from_exception(
                exc_type,
                exc_value,
                exc_traceback,
                suppress=self.tracebacks_suppress,
            )
            message = record.getMessage()

        message_renderable = self.render_message(message)
        log_renderable = self.render(record=record, traceback=traceback, message_renderable=message_renderable)
        try:
            self.console.print(log_renderable)
        except Exception:  # pylint: disable=broad-except
            self.handleError(record)

    def render_message(self, message: str) -> ConsoleRenderable:
        """Render message text in to Text, highlighting solver and run states."""
        message_text = self.highlighter(Text(message))
        keywords = self.KEYWORDS if self.keywords is None else self.keywords
        if keywords:
            message_text.highlight_words(keywords, "logging.keyword")
        return message_text

    def render(
        self,
        *,
        record: logging.LogRecord,
        traceback: Optional[Traceback],
        message_renderable: ConsoleRenderable,
    ) -> ConsoleRenderable:
        """Render log for display.

        Args:
            record (LogRecord): logging Record.
            traceback (Optional[Traceback]): Traceback instance or None for no Traceback.
            message_renderable (ConsoleRenderable): Renderable (typically Text) containing log message contents.

        Returns:
            ConsoleRenderable: Renderable to display log.
        """
        return self._log_render(  # type: ignore[no-any-return]
            self.console,
            [message_renderable] if not traceback else [message_renderable, traceback],
            log_time=datetime.fromtimestamp(record.created),
            time_format=None if self.formatter is None else self.formatter.datefmt,
            level=self.get_level_text(record),
            path=Path(record.pathname).name,
            line_no=record.lineno,
            link_path=None,
        )


def log_config(level: str = "WARNING") -> dict[str, Any]:
    """
    Dict logging configuration for the package.

    Everything below ``convex_cam`` goes to the rich console handler.
    """
    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {"standard": {"format": "[%(name)s][%(funcName)s]   %(message)s"}},
        "handlers": {
            "console": {
                "class": "convex_cam.logging.RichPicologgingHandler",
                "formatter": "standard",
            },
        },
        "loggers": {
            "convex_cam": {
                "level": level.upper(),
                "handlers": ["console"],
                "propagate": False,
            },
        },
    }


def configure_logging(level: str = "WARNING") -> None:
    """
    Applies [`log_config`][convex_cam.logging.log_config] at the given level.
    """
    dictConfig(log_config(level))


@lru_cache(maxsize=None)
def get_logger(name: Optional[str] = None) -> logging.Logger:
    """
    Returns a logger from the configured backend.
    """
    return logging.getLogger(name)
