import functools
import logging
from typing import Callable, TypeVar
import click
import typer
from typer.core import TyperGroup
from pydantic import ValidationError
from rich.console import Console
from app.utils.errors import SyncwatchError

# Newer typer releases vendor click; catch usage errors from whichever click typer raises
try:
    from typer._click.exceptions import UsageError as _TyperUsageError
    _USAGE_ERRORS: tuple[type[BaseException], ...] = (click.UsageError, _TyperUsageError)
except ImportError:
    _USAGE_ERRORS = (click.UsageError,)

logger = logging.getLogger(__name__)

_stderr = Console(stderr=True)

F = TypeVar("F", bound=Callable)

# Dictionary of error titles for each exit code
ERROR_MESSAGES = {
    1: "Usage Error",
    2: "Data Error",
}


# Standard error response format
def error_response(exit_code: int, message: str) -> typer.Exit:
    """
    Prints a standardized error line to stderr and builds the matching exit.

    - **Parameters**:
        - `exit_code`: Process exit code (1 usage, 2 data).
        - `message`: A descriptive message about the error.

    - **Returns**:
        - A `typer.Exit` carrying the exit code, to be raised by the caller.
    """
    title = ERROR_MESSAGES.get(exit_code, "Unknown Error")
    _stderr.print(f"[bold red]{title}[/bold red]: {message}", markup=True, highlight=False)
    return typer.Exit(code=exit_code)


def domain_error_handler(exc: SyncwatchError) -> typer.Exit:
    return error_response(exc.exit_code, str(exc))


def validation_error_handler(exc: ValidationError) -> typer.Exit:
    # Pydantic errors reaching the CLI come from flag values
    errors = "; ".join(
        f"{'.'.join(str(part) for part in err['loc']) or 'value'}: {err['msg']}" for err in exc.errors()
    )
    return error_response(1, errors)


def os_error_handler(exc: OSError) -> typer.Exit:
    return error_response(2, f"{exc.strerror or exc}: {exc.filename}" if exc.filename else str(exc))


def unknown_error_handler(exc: Exception) -> typer.Exit:
    logger.exception("Unexpected error")
    return error_response(2, f"Unexpected error: {exc}")


# Handler table, checked in order
HANDLERS: list[tuple[type[BaseException], Callable[..., typer.Exit]]] = [
    (SyncwatchError, domain_error_handler),
    (ValidationError, validation_error_handler),
    (OSError, os_error_handler),
]


class UsageExitGroup(TyperGroup):
    """
    Command group whose flag-parsing errors (missing options, bad choices, out-of-range numbers,
    unknown commands) exit with the usage code 1 instead of click's 2.
    """

    def make_context(self, *args, **kwargs):
        try:
            return super().make_context(*args, **kwargs)
        except _USAGE_ERRORS as exc:
            exc.exit_code = 1
            raise

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except _USAGE_ERRORS as exc:
            exc.exit_code = 1
            raise


def handle_errors(command: F) -> F:
    """
    Decorator for CLI commands translating exceptions into exit codes.

    - **Parameters**:
        - `command`: The command function.

    - **Returns**:
        - The wrapped command; `typer.Exit` and click exceptions pass through untouched.
    """
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (typer.Exit, typer.Abort):
            raise
        except Exception as exc:
            for exc_type, handler in HANDLERS:
                if isinstance(exc, exc_type):
                    raise handler(exc) from exc
            raise unknown_error_handler(exc) from exc

    return wrapper  # type: ignore[return-value]
