import numpy as np
import orjson
import pytest
import torch
from typer.testing import CliRunner
from app.schemas.data_schemas import ManifestRecord
from app.schemas.feature_schemas import DelayDistributionSequence, FeatureKind
from app.schemas.model_schemas import LossKind, TrainConfig
from app.schemas.report_schemas import LabeledScores
from app.services.ar_model import init_params
from app.services.eval_metrics import average_precision, roc_auc
from app.services.pipeline import Preprocessing
from app.services.training import model_config_for
from app.storage.checkpoints import save_checkpoint
from app.storage.feature_files import feature_file_from, save_feature_file
from app.storage.manifest import save_manifest
from main import app

# Small decoder so each training run takes a fraction of a second
SMALL = ["--n-blocks", "1", "--n-heads", "2", "--d-model", "16", "--n-max", "20", "--batch-size", "4"]


@pytest.fixture
def runner():
    """
    Fixture providing a CLI runner that keeps stderr apart from stdout.
    """
    try:
        return CliRunner(mix_stderr=False)
    except TypeError:
        # click >= 8.2 dropped mix_stderr and always keeps stderr separate
        return CliRunner()


def invoke(runner, *args):
    return runner.invoke(app, [str(a) for a in args])


@pytest.fixture
def corpus(runner, tmp_path):
    """
    Fixture generating a small drift corpus with activations.

    - **Returns**:
        - The corpus directory (4 reals, 4 fakes, manifest.json).
    """
    out = tmp_path / "corpus"
    result = invoke(runner, "gen", "--out", out, "--num-real", 4, "--num-fake", 4, "--seed", 3, "--activations")
    assert result.exit_code == 0, result.stderr
    return out


def train(runner, corpus, out, *extra):
    return invoke(
        runner, "train", "--manifest", corpus / "manifest.json", "--feature-set", "distribution",
        "--loss", "soft_ce", "--steps", 5, "--warmup", 2, "--out", out, "--ignore-fakes", *SMALL, *extra,
    )


def test_gen_writes_corpus(runner, tmp_path):
    """
    Test the `gen` command.

    - **Steps**:
        1. Generates 2 reals and 2 fakes twice with the same seed.

    - **Assertions**:
        - Four feature files and a manifest are written, both trees are byte-identical and the
          manifest labels match the file names.
    """
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        result = invoke(runner, "gen", "--out", out, "--num-real", 2, "--num-fake", 2, "--seed", 7)
        assert result.exit_code == 0, result.stderr

    names = sorted(p.name for p in first.iterdir())
    assert names == ["fake_0000.avsf", "fake_0001.avsf", "manifest.json", "real_0000.avsf", "real_0001.avsf"]
    assert all((first / name).read_bytes() == (second / name).read_bytes() for name in names)

    records = orjson.loads((first / "manifest.json").read_bytes())
    assert [(r["path"], r["label"]) for r in records] == [
        ("real_0000.avsf", 0), ("real_0001.avsf", 0), ("fake_0000.avsf", 1), ("fake_0001.avsf", 1),
    ]
    assert records[2]["category"] == "drift"


def test_gen_interval_records(runner, tmp_path):
    """
    Test that interval-mode fakes record their manipulated frames.
    """
    result = invoke(runner, "gen", "--out", tmp_path, "--num-real", 1, "--num-fake", 3, "--mode", "interval")
    assert result.exit_code == 0, result.stderr
    fakes = [r for r in orjson.loads((tmp_path / "manifest.json").read_bytes()) if r["label"] == 1]
    assert all(r["interval"][1] - r["interval"][0] == 9 for r in fakes)


def test_train_rejects_bad_input(runner, tmp_path):
    """
    Test `train` exit codes.

    - **Steps**:
        1. Trains on a corpus with fakes only.
        2. Trains with a loss that does not fit the feature set, and with an unknown feature set.

    - **Assertions**:
        - Missing real data exits with 2; bad pairings and unknown names exit with 1.
    """
    fakes = tmp_path / "fakes"
    assert invoke(runner, "gen", "--out", fakes, "--num-real", 0, "--num-fake", 3).exit_code == 0
    result = train(runner, fakes, tmp_path / "m.ckpt")
    assert result.exit_code == 2
    assert "no real training data" in result.stderr

    result = invoke(runner, "train", "--manifest", fakes / "manifest.json", "--feature-set", "distribution",
                    "--loss", "mse", "--steps", 5, "--out", tmp_path / "m.ckpt")
    assert result.exit_code == 1
    result = invoke(runner, "train", "--manifest", fakes / "manifest.json", "--feature-set", "spectrogram",
                    "--loss", "mse", "--steps", 5, "--out", tmp_path / "m.ckpt")
    assert result.exit_code == 1
    assert "--feature-set" in result.stderr


def test_missing_manifest_is_a_data_error(runner, tmp_path):
    """
    Test that an unreadable manifest exits with 2.
    """
    result = train(runner, tmp_path, tmp_path / "m.ckpt")
    assert result.exit_code == 2


def test_train_is_reproducible(runner, corpus, tmp_path):
    """
    Test `train` output.

    - **Steps**:
        1. Trains the same recipe twice.

    - **Assertions**:
        - The checkpoints are byte-identical, the header records a softmax head of width 31 and
          the loss trace has one row per step.
    """
    first, second = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    assert train(runner, corpus, first).exit_code == 0
    assert train(runner, corpus, second).exit_code == 0
    assert first.read_bytes() == second.read_bytes()

    header = orjson.loads(first.read_bytes().split(b"\n", 1)[0])
    cfg = header["model_cfg"]
    assert (cfg["head"], cfg["d_in"], cfg["d_out"], cfg["n_max"]) == ("softmax", 31, 31, 20)
    assert header["train_cfg"]["loss"] == "soft_ce"
    trace = (tmp_path / "a.ckpt.trace.csv").read_text(encoding="utf-8").splitlines()
    assert trace[0] == "step,lr,loss"
    assert len(trace) == 6


def test_score_prints_record(runner, corpus, tmp_path):
    """
    Test the `score` command.

    - **Assertions**:
        - The JSON record is identical across runs, covers five 20-frame windows of a 120-frame
          video, and the per-frame CSV has one row per frame.
    """
    model = tmp_path / "m.ckpt"
    assert train(runner, corpus, model).exit_code == 0
    args = ["score", "--model", model, "--input", corpus / "fake_0000.avsf", "--per-frame", tmp_path / "f.csv"]
    first, second = invoke(runner, *args), invoke(runner, *args)
    assert first.exit_code == 0, first.stderr
    assert first.stdout == second.stdout
    record = orjson.loads(first.stdout)
    assert record["n_windows"] == 5
    assert record["video_score"] > 0
    lines = (tmp_path / "f.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "frame,score,cumulative"
    assert len(lines) == 121


def test_activation_feature_set(runner, corpus, tmp_path):
    """
    Test training and scoring on projected activations.

    - **Assertions**:
        - Training with mse succeeds, and scoring needs the activation file of the video.
    """
    model = tmp_path / "act.ckpt"
    result = invoke(
        runner, "train", "--manifest", corpus / "manifest.json", "--feature-set", "activation_pca",
        "--loss", "mse", "--steps", 3, "--warmup", 1, "--pca-dim", 8, "--out", model, "--ignore-fakes", *SMALL,
    )
    assert result.exit_code == 0, result.stderr
    header = orjson.loads(model.read_bytes().split(b"\n", 1)[0])
    assert header["model_cfg"]["d_in"] == 8
    assert len(header["preprocessing"]["pca"]["components"]) == 8

    result = invoke(runner, "score", "--model", model, "--input", corpus / "real_0000.avsf",
                    "--activations", corpus / "real_0000.act.avsf")
    assert result.exit_code == 0, result.stderr
    assert invoke(runner, "score", "--model", model, "--input", corpus / "real_0000.avsf").exit_code == 1


def test_eval_with_localization(runner, tmp_path):
    """
    Test `eval` on an interval-mode corpus.

    - **Assertions**:
        - metrics.json reports AP and AUC in [0, 1] and a top-5 localization accuracy; a
          concurrent run gives the same file.
    """
    corpus = tmp_path / "corpus"
    assert invoke(runner, "gen", "--out", corpus, "--num-real", 3, "--num-fake", 3, "--mode", "interval").exit_code == 0
    model = tmp_path / "m.ckpt"
    assert train(runner, corpus, model).exit_code == 0

    out, concurrent = tmp_path / "metrics.json", tmp_path / "metrics2.json"
    result = invoke(runner, "eval", "--model", model, "--manifest", corpus / "manifest.json", "--out", out)
    assert result.exit_code == 0, result.stderr
    assert invoke(runner, "eval", "--model", model, "--manifest", corpus / "manifest.json",
                  "--out", concurrent, "--workers", 3).exit_code == 0
    assert out.read_bytes() == concurrent.read_bytes()

    metrics = orjson.loads(out.read_bytes())
    assert 0.0 <= metrics["ap"] <= 1.0 and 0.0 <= metrics["auc"] <= 1.0
    assert (metrics["n_real"], metrics["n_fake"]) == (3, 3)
    assert 0.0 <= metrics["localization_top5"] <= 1.0
    assert set(metrics["per_category"]) == {"interval"}


def test_baseline_nb(runner, corpus, tmp_path):
    """
    Test the Naive Bayes baseline command.

    - **Assertions**:
        - It writes the same metrics schema as `eval`.
    """
    out = tmp_path / "nb.json"
    result = invoke(runner, "baseline-nb", "--manifest", corpus / "manifest.json", "--out", out)
    assert result.exit_code == 0, result.stderr
    metrics = orjson.loads(out.read_bytes())
    assert set(metrics) == {"ap", "auc", "n_real", "n_fake", "per_category"}
    assert metrics["per_category"]["drift"]["n_fake"] == 4


@pytest.mark.parametrize("args", [
    ["train", "--feature-set", "distribution", "--loss", "soft_ce", "--steps", "5", "--out", "m.ckpt"],
    ["gen", "--out", "corpus", "--num-real", "1", "--num-fake", "1", "--mode", "bogus"],
    ["gen", "--out", "corpus", "--num-real", "-1", "--num-fake", "1"],
    ["compress", "--out", "corpus"],
])
def test_flag_errors_exit_with_usage_code(runner, tmp_path, monkeypatch, args):
    """
    Test that errors caught while parsing flags are usage errors.

    - **Steps**:
        1. Runs `train` without `--manifest`, `gen` with an unknown fake mode, `gen` with a
           negative count and an unknown command.

    - **Assertions**:
        - Each exits with 1, explains itself on stderr and writes nothing.
    """
    monkeypatch.chdir(tmp_path)
    result = invoke(runner, *args)
    assert result.exit_code == 1
    assert result.stderr.strip()
    assert not (tmp_path / "corpus").exists() and not (tmp_path / "m.ckpt").exists()


def test_eval_metrics_match_score_records(runner, corpus, tmp_path):
    """
    Test that `eval` ranks exactly the scores `score` prints.

    - **Steps**:
        1. Trains a model and scores every manifest record with `score`.
        2. Runs `eval` on the same manifest.

    - **Assertions**:
        - AP and AUC in metrics.json equal the metrics of the printed video scores.
    """
    model = tmp_path / "m.ckpt"
    assert train(runner, corpus, model).exit_code == 0
    records = orjson.loads((corpus / "manifest.json").read_bytes())
    scores = []
    for record in records:
        result = invoke(runner, "score", "--model", model, "--input", corpus / record["path"])
        assert result.exit_code == 0, result.stderr
        scores.append(orjson.loads(result.stdout)["video_score"])
    expected = LabeledScores(scores=scores, labels=[r["label"] for r in records])

    out = tmp_path / "metrics.json"
    result = invoke(runner, "eval", "--model", model, "--manifest", corpus / "manifest.json", "--out", out)
    assert result.exit_code == 0, result.stderr
    metrics = orjson.loads(out.read_bytes())
    assert metrics["ap"] == average_precision(expected)
    assert metrics["auc"] == roc_auc(expected)


def peaked_rows(column: int, frames: int = 20) -> np.ndarray:
    rows = np.full((frames, 31), 0.1 / 30)
    rows[:, column] = 0.9
    return rows


def test_eval_perfect_separation(runner, tmp_path):
    """
    Test `eval` when every fake scores above every real.

    - **Steps**:
        1. Saves a checkpoint whose decoder always predicts a peak at zero offset.
        2. Writes 3 reals peaked at zero offset and 3 fakes peaked at other offsets.

    - **Assertions**:
        - AP and AUC are both exactly 1.
    """
    cfg = model_config_for(LossKind.SOFT_CE, FeatureKind.DISTRIBUTION, 31, n_blocks=1, n_heads=2, d_model=8, n_max=20)
    params = init_params(cfg, 0)
    with torch.no_grad():
        for p in params.parameters():
            p.zero_()
        params.output_proj.bias[15] = 5.0
    model = tmp_path / "peak.ckpt"
    save_checkpoint(model, params, TrainConfig(total_steps=0, loss=LossKind.SOFT_CE), FeatureKind.DISTRIBUTION,
                    Preprocessing().to_dict())

    records = []
    for index, column in enumerate([15, 15, 15, 0, 7, 30]):
        name = f"video_{index}.avsf"
        save_feature_file(tmp_path / name, feature_file_from(DelayDistributionSequence(rows=peaked_rows(column))))
        records.append(ManifestRecord(path=name, label=0 if column == 15 else 1,
                                      category=None if column == 15 else "shifted"))
    save_manifest(tmp_path / "manifest.json", records)

    out = tmp_path / "metrics.json"
    result = invoke(runner, "eval", "--model", model, "--manifest", tmp_path / "manifest.json", "--out", out)
    assert result.exit_code == 0, result.stderr
    metrics = orjson.loads(out.read_bytes())
    assert (metrics["ap"], metrics["auc"]) == (1.0, 1.0)
    assert (metrics["n_real"], metrics["n_fake"]) == (3, 3)


def test_baseline_nb_misses_flat_fakes(runner, tmp_path):
    """
    Test the Naive Bayes baseline on fakes whose delay histograms match real ones.

    - **Steps**:
        1. Generates 50 reals and 50 flat-mode fakes.
        2. Runs `baseline-nb` twice.

    - **Assertions**:
        - Both runs write the same bytes, and the AUC stays near chance.
    """
    corpus = tmp_path / "flat"
    result = invoke(runner, "gen", "--out", corpus, "--num-real", 50, "--num-fake", 50, "--mode", "flat", "--seed", 5)
    assert result.exit_code == 0, result.stderr
    first, second = tmp_path / "nb1.json", tmp_path / "nb2.json"
    for out in (first, second):
        result = invoke(runner, "baseline-nb", "--manifest", corpus / "manifest.json", "--out", out)
        assert result.exit_code == 0, result.stderr
    assert first.read_bytes() == second.read_bytes()
    assert abs(orjson.loads(first.read_bytes())["auc"] - 0.5) <= 0.2


def test_gen_unwritable_output(runner, tmp_path):
    """
    Test `gen` when the output directory cannot be created.

    - **Assertions**:
        - It exits with 2 and reports a data error on stderr.
    """
    blocker = tmp_path / "taken"
    blocker.write_text("not a directory", encoding="utf-8")
    result = invoke(runner, "gen", "--out", blocker / "corpus", "--num-real", 1, "--num-fake", 1)
    assert result.exit_code == 2
    assert "Data Error" in result.stderr
