import logging
from rich.console import Console
from rich.logging import RichHandler

# Logs go to stderr; stdout is reserved for machine-readable records
_console = Console(stderr=True)


# Function to configure the root logger once per process
def configure_logging(level: str = "INFO") -> None:
    """
    Installs a single rich handler on the root logger.

    - **Parameters**:
        - `level`: Logging level name (e.g. `"INFO"`, `"DEBUG"`).
    """
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, RichHandler):
            root.removeHandler(handler)
    root.addHandler(RichHandler(console=_console, show_path=False, rich_tracebacks=True))
    root.setLevel(level.upper())
