from typing import Optional
from pydantic import BaseModel, Field, model_validator


class WindowScore(BaseModel):
    start: int
    score: float


class ScoreReport(BaseModel):
    """
    Anomaly scores of one input (higher means more likely fake).

    - **Attributes**:
        - `frame_scores`: Per-frame loss.
        - `cumulative`: Running sums of `frame_scores`.
        - `window_scores`: Mean frame loss of every scored window, keyed by its start frame.
        - `video_score`: Mean of the window scores.
        - `short_input`: True when the input was shorter than the window and was scored as one
          shorter window.
    """
    frame_scores: list[float]
    cumulative: list[float]
    window_scores: list[WindowScore]
    video_score: float
    short_input: bool = False

    @property
    def n_windows(self) -> int:
        return len(self.window_scores)


class ScoreRecord(BaseModel):
    """Line printed by `score`."""
    path: str
    video_score: float
    n_windows: int


class LabeledScores(BaseModel):
    """
    Scores with real (0) / fake (1) labels.
    """
    scores: list[float]
    labels: list[int]

    @model_validator(mode="after")
    def _check(self):
        if len(self.scores) != len(self.labels):
            raise ValueError("scores and labels must have the same length")
        if any(label not in (0, 1) for label in self.labels):
            raise ValueError("labels must be 0 (real) or 1 (fake)")
        return self

    @property
    def n_fake(self) -> int:
        return sum(self.labels)

    @property
    def n_real(self) -> int:
        return len(self.labels) - self.n_fake


class CategoryMetrics(BaseModel):
    ap: float
    auc: float
    n_fake: int


class MetricsReport(BaseModel):
    """
    Content of metrics.json.
    """
    ap: float
    auc: float
    n_real: int
    n_fake: int
    per_category: dict[str, CategoryMetrics] = Field(default_factory=dict)
    localization_k: Optional[int] = None
    localization: Optional[float] = None

    def to_json_dict(self) -> dict:
        payload = self.model_dump(exclude={"localization_k", "localization"})
        if self.localization is not None:
            payload[f"localization_top{self.localization_k}"] = self.localization
        return payload
