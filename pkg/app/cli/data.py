import logging
from pathlib import Path
import typer
from app.schemas.data_schemas import FakeMode, GenConfig, ManifestRecord
from app.schemas.feature_schemas import ActivationSource
from app.services.synthdata import gen_activations, gen_fake, gen_real, video_seed
from app.storage.feature_files import feature_file_from, save_feature_file
from app.storage.manifest import save_manifest
from app.utils.error_handlers import handle_errors

logger = logging.getLogger(__name__)


# Command to generate a synthetic corpus
@handle_errors
def gen(
    out: Path = typer.Option(..., "--out", help="Output directory."),
    num_real: int = typer.Option(..., "--num-real", min=0, help="Number of real videos."),
    num_fake: int = typer.Option(..., "--num-fake", min=0, help="Number of fake videos."),
    mode: FakeMode = typer.Option(FakeMode.DRIFT, "--mode", help="Fake mode."),
    seed: int = typer.Option(0, "--seed", min=0, help="Corpus seed."),
    frames: int = typer.Option(120, "--frames", help="Frames per video."),
    activations: bool = typer.Option(False, "--activations", help="Also write activation files."),
    activation_source: ActivationSource = typer.Option(
        ActivationSource.AUDIO_VISUAL, "--activation-source", help="Activation feature source."
    ),
):
    """
    Generate synthetic affinity files and a manifest.json.

    - **Outputs**:
        - `real_NNNN.avsf` / `fake_NNNN.avsf` affinity files (plus `.act.avsf` activation files
          with `--activations`) and `manifest.json` in `--out`.
    """
    cfg = GenConfig(frames=frames, seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for label, count in ((0, num_real), (1, num_fake)):
        prefix = "real" if label == 0 else "fake"
        for index in range(count):
            vseed = video_seed(seed, label, index)
            interval = None
            if label == 0:
                aff = gen_real(cfg, vseed)
            else:
                aff, interval = gen_fake(cfg, vseed, mode)
            name = f"{prefix}_{index:04d}.avsf"
            save_feature_file(out / name, feature_file_from(aff))
            act_name = None
            if activations:
                act_name = f"{prefix}_{index:04d}.act.avsf"
                acts = gen_activations(cfg, vseed, label, activation_source, mode)
                save_feature_file(out / act_name, feature_file_from(acts, cfg.window))
            records.append(ManifestRecord(
                path=name,
                label=label,
                category=mode.value if label == 1 else None,
                interval=interval,
                activations=act_name,
            ))
    save_manifest(out / "manifest.json", records)
    logger.info("Wrote %d real and %d fake videos to %s", num_real, num_fake, out)
