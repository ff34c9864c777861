"""Train a complete place recognition system from one traversal and query it.

Training runs in three stages. First, q baseline classifiers are trained on
the raw frames with seeds ``base_seed + i``. Second, every frame is augmented
``copies_per_frame`` times and passed through the frozen classifiers. The
stacked scores, labelled with the true place, form a fixed training set for
the merger, topped up with ``clean_copies`` un-augmented score matrices per
frame. Third, the merger is trained on that set.

Classifiers see frames mapped from [0, 1] to [-1, 1] (``classifier_input``).
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .augment import augment_pipeline
from .baseline import INPUT_HEIGHT, INPUT_SIZE, INPUT_WIDTH, BaselineClassifier, BaselineConfig
from .merger import MergerNet, conv_output_length, merger_train
from .nn_core import make_rng

log = logging.getLogger(__name__)

MERGER_SEED_OFFSET = 1000
AUGMENT_SEED_OFFSET = 2000


@dataclass
class SystemConfig:
    neurons: int = 192
    baseline_dropout: float = 0.75
    baseline_epochs: int = 30
    baseline_lr: float = 1e-3
    q: int = 2
    width: int = 4
    merger_dropout: float = 0.30
    merger_epochs: int = 100
    merger_lr: float = 1e-3
    copies_per_frame: int = 5
    clean_copies: int = 1
    base_seed: int = 0

    def __post_init__(self):
        if self.q < 1:
            raise ValueError(f"q must be >= 1, got {self.q}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.copies_per_frame < 1:
            raise ValueError(f"copies_per_frame must be >= 1, got {self.copies_per_frame}")
        if self.clean_copies < 0:
            raise ValueError(f"clean_copies must be >= 0, got {self.clean_copies}")
        if not 0.0 <= self.merger_dropout < 1.0:
            raise ValueError(f"merger_dropout must be in [0, 1), got {self.merger_dropout}")

    def baseline_config(self, n_places: int, index: int) -> BaselineConfig:
        return BaselineConfig(
            n_places=n_places,
            neurons=self.neurons,
            dropout_rate=self.baseline_dropout,
            epochs=self.baseline_epochs,
            seed=self.base_seed + index,
            lr=self.baseline_lr,
        )

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def classifier_input(frames: np.ndarray) -> np.ndarray:
    """Map [0, 1] pixels to [-1, 1]; shape is kept."""
    return 2.0 * np.asarray(frames, dtype=np.float64) - 1.0


def as_frames(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim < 2 or frames[0].size != INPUT_SIZE:
        raise ValueError(f"frames must be {INPUT_WIDTH}x{INPUT_HEIGHT} grayscale, got {frames.shape}")
    return frames.reshape(-1, INPUT_HEIGHT, INPUT_WIDTH)


class VprSystem:
    def __init__(self, classifiers: list[BaselineClassifier], merger: MergerNet, config: SystemConfig):
        n = merger.n_places
        if len(classifiers) != merger.q:
            raise ValueError(f"merger expects q={merger.q} classifiers, got {len(classifiers)}")
        for c in classifiers:
            if c.n_places != n:
                raise ValueError(f"classifier {c.model_id} has N={c.n_places}, merger has N={n}")
        if merger.width != config.width or merger.q != config.q:
            raise ValueError("merger dimensions disagree with the system config")
        self.classifiers = classifiers
        self.merger = merger
        self.config = config

    @property
    def n_places(self) -> int:
        return self.merger.n_places

    def score_matrix(self, query: np.ndarray) -> np.ndarray:
        x = classifier_input(query).reshape(-1)
        if x.shape[0] != INPUT_SIZE:
            raise ValueError(f"query must have {INPUT_SIZE} pixels, got {x.shape[0]}")
        return np.stack([c.folded_weights() @ x for c in self.classifiers])

    def score_matrices(self, queries: np.ndarray) -> np.ndarray:
        """``(n, q, N)`` score matrices for a stack of frames."""
        x = classifier_input(as_frames(queries)).reshape(-1, INPUT_SIZE)
        return np.stack([c.scores_batch(x) for c in self.classifiers], axis=1)

    def predict(self, query: np.ndarray) -> tuple[int, float, np.ndarray]:
        scores = self.score_matrix(query)
        place, confidence = self.merger.predict(scores)
        return place, confidence, scores

    def predict_batch(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.merger.predict_batch(self.score_matrices(queries))


@dataclass
class TrainReport:
    n_places: int
    baseline_train_accuracy: list[float] = field(default_factory=list)
    baseline_epochs_run: list[int] = field(default_factory=list)
    augmented_accuracy: list[float] = field(default_factory=list)
    disagreement_rate: float = 0.0
    merger_train_accuracy: float = float("nan")
    merger_final_loss: float = float("nan")
    merger_samples: int = 0
    seconds: dict[str, float] = field(default_factory=dict)

    def to_kv(self) -> dict[str, str]:
        out = {"n_places": str(self.n_places)}
        for i, (acc, ep) in enumerate(zip(self.baseline_train_accuracy, self.baseline_epochs_run)):
            out[f"baseline{i}_train_accuracy"] = f"{acc:.6f}"
            out[f"baseline{i}_epochs"] = str(ep)
        for i, acc in enumerate(self.augmented_accuracy):
            out[f"baseline{i}_augmented_accuracy"] = f"{acc:.6f}"
        out["disagreement_rate"] = f"{self.disagreement_rate:.6f}"
        out["merger_samples"] = str(self.merger_samples)
        out["merger_train_accuracy"] = f"{self.merger_train_accuracy:.6f}"
        out["merger_final_loss"] = f"{self.merger_final_loss:.6f}"
        for k, v in self.seconds.items():
            out[f"seconds_{k}"] = f"{v:.3f}"
        return out

    def to_table(self) -> str:
        lines = [f"{'model':<10} {'epochs':>6} {'train acc':>10} {'augmented acc':>14}"]
        for i, acc in enumerate(self.baseline_train_accuracy):
            aug = self.augmented_accuracy[i] if i < len(self.augmented_accuracy) else float("nan")
            lines.append(f"{'baseline' + str(i):<10} {self.baseline_epochs_run[i]:>6} {acc:>10.4f} {aug:>14.4f}")
        lines.append(f"{'merger':<10} {'':>6} {self.merger_train_accuracy:>10.4f} {'':>14}")
        lines.append(f"disagreement rate: {self.disagreement_rate:.4f} over {self.merger_samples} samples")
        return "\n".join(lines)


def augmented_frames(frames: np.ndarray, copies: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``copies`` augmented versions of every frame (frame-major) and their labels.

    Each frame draws from its own rng derived from ``(seed, frame index)``.
    """
    frames = as_frames(frames)
    out = np.empty((frames.shape[0] * copies, INPUT_HEIGHT, INPUT_WIDTH))
    for n, frame in enumerate(frames):
        rng = make_rng([seed, n])
        for c in range(copies):
            out[n * copies + c] = augment_pipeline(frame, rng)
    labels = np.repeat(np.arange(frames.shape[0]), copies)
    return out, labels


def stack_scores(classifiers: list[BaselineClassifier], frames: np.ndarray) -> np.ndarray:
    x = classifier_input(as_frames(frames)).reshape(-1, INPUT_SIZE)
    return np.stack([c.scores_batch(x) for c in classifiers], axis=1)


def build_merger_set(classifiers: list[BaselineClassifier], frames: np.ndarray, copies: int,
                     seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Score matrices ``(copies * N, q, N)`` of augmented frames, with labels."""
    images, labels = augmented_frames(frames, copies, seed)
    return stack_scores(classifiers, images), labels


def disagreement_rate(scores: np.ndarray) -> float:
    """Fraction of score matrices whose rows do not all share one argmax."""
    preds = np.argmax(scores, axis=2)
    return float(np.mean(np.any(preds != preds[:, :1], axis=1)))


def row_accuracy(scores: np.ndarray, labels: np.ndarray) -> list[float]:
    preds = np.argmax(scores, axis=2)
    return [float(np.mean(preds[:, i] == labels)) for i in range(scores.shape[1])]


def train_baselines(frames: np.ndarray, config: SystemConfig,
                    report: TrainReport | None = None) -> list[BaselineClassifier]:
    frames = as_frames(frames)
    n = frames.shape[0]
    x = classifier_input(frames)
    classifiers = []
    for i in range(config.q):
        model = BaselineClassifier.init(config.baseline_config(n, i), model_id=i)
        hist = model.train(x)
        log.info("baseline %d: %d epochs, train accuracy %.4f", i, len(hist.accuracy), hist.final_accuracy)
        if report is not None:
            report.baseline_train_accuracy.append(
                hist.final_accuracy if hist.accuracy else float(np.mean(model_predictions(model, x) == np.arange(n)))
            )
            report.baseline_epochs_run.append(len(hist.accuracy))
        classifiers.append(model)
    return classifiers


def model_predictions(model: BaselineClassifier, x: np.ndarray) -> np.ndarray:
    return np.argmax(model.scores_batch(x), axis=1)


def train_merger_stage(classifiers: list[BaselineClassifier], frames: np.ndarray, config: SystemConfig,
                       report: TrainReport | None = None) -> MergerNet:
    n = as_frames(frames).shape[0]
    conv_output_length(n, config.width)
    scores, labels = build_merger_set(
        classifiers, frames, config.copies_per_frame, config.base_seed + AUGMENT_SEED_OFFSET
    )
    rate = disagreement_rate(scores)
    if config.q >= 2 and rate == 0.0:
        warnings.warn(
            "merger training degenerate: baselines agree on every augmented sample", RuntimeWarning
        )
    augmented_scores, augmented_labels = scores, labels
    if config.clean_copies:
        # without these the merger only sees clean score patterns by chance
        # (identity op, no flip) and can miss training frames
        clean = stack_scores(classifiers, frames)
        scores = np.concatenate([scores] + [clean] * config.clean_copies)
        labels = np.concatenate([labels] + [np.arange(n)] * config.clean_copies)
    merger = MergerNet.init(config.q, n, config.width, config.merger_dropout,
                            seed=config.base_seed + MERGER_SEED_OFFSET)
    hist = merger_train(merger, scores, labels, config.merger_epochs,
                        seed=config.base_seed + MERGER_SEED_OFFSET + 1, lr=config.merger_lr)
    merger.round_to_float32()
    if report is not None:
        report.augmented_accuracy = row_accuracy(augmented_scores, augmented_labels)
        report.disagreement_rate = rate
        report.merger_samples = int(labels.size)
        pred, _ = merger.predict_batch(scores)
        report.merger_train_accuracy = float(np.mean(pred == labels))
        report.merger_final_loss = hist.loss[-1] if hist.loss else float("nan")
    return merger


def train_system(frames: np.ndarray, config: SystemConfig | None = None,
                 keep_latent: bool = False) -> tuple[VprSystem, TrainReport]:
    config = config or SystemConfig()
    frames = as_frames(frames)
    if frames.shape[0] < 2:
        raise ValueError("a traversal needs at least two frames")
    report = TrainReport(n_places=frames.shape[0])
    t0 = time.perf_counter()
    classifiers = train_baselines(frames, config, report)
    t1 = time.perf_counter()
    for c in classifiers:
        c.folded_weights()
        if not keep_latent:
            c.drop_latent()
    merger = train_merger_stage(classifiers, frames, config, report)
    t2 = time.perf_counter()
    report.seconds = {"baselines": t1 - t0, "merger": t2 - t1}
    return VprSystem(classifiers, merger, config), report
