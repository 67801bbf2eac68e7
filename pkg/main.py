from typing import Optional
import torch
import typer
from app.cli import baseline, data, model
from app.utils.config import get_settings
from app.utils.error_handlers import UsageExitGroup
from app.utils.logger import configure_logging

# Create the Typer application
app = typer.Typer(
    name="syncwatch",
    cls=UsageExitGroup,
    help="Audio-visual synchronization anomaly detection.",
    no_args_is_help=True,
    add_completion=False,
)


# Global options shared by every command
@app.callback()
def main(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Overrides SYNCWATCH_LOG_LEVEL."),
):
    """
    Configures logging and torch threading before any command runs.

    - **Parameters**:
        - `log_level`: Logging level name; defaults to the settings value.
    """
    settings = get_settings()
    configure_logging(log_level or settings.log_level)
    torch.set_num_threads(settings.num_threads)


# Register commands
app.command("gen")(data.gen)
app.command("train")(model.train_model)
app.command("score")(model.score)
app.command("eval")(model.evaluate)
app.command("baseline-nb")(baseline.baseline_nb)


if __name__ == "__main__":
    app()
