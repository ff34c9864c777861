"""Binary-weighted baseline place classifier.

Input is a 64x32 grayscale frame flattened to 2048 pixels. FC1 holds one
binary weight per (neuron, pixel) pair and multiplies without summing, so its
output has ``b = 2048 * a`` entries. FC2 maps those ``b`` values to one score
per place. Dropout sits between the two layers during training.

Storage is output-major: ``fc1`` has shape ``(a, 2048)`` and ``fc2`` has shape
``(N, b)``; column ``j * 2048 + i`` of ``fc2`` reads pixel ``i`` through
neuron ``j``.

At inference both sign matrices fold into one integer matrix
``W[n, i] = sum_j fc2[n, j*2048 + i] * fc1[j, i]`` with entries in ``[-a, a]``,
so a forward pass is a single ``(N, 2048)`` matvec. The fold is exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .nn_core import (
    AdamState,
    BinaryLatentMatrix,
    PackedBits,
    dropout_mask,
    make_rng,
)

log = logging.getLogger(__name__)

INPUT_WIDTH = 64
INPUT_HEIGHT = 32
INPUT_SIZE = INPUT_WIDTH * INPUT_HEIGHT


@dataclass
class BaselineConfig:
    n_places: int
    neurons: int = 192
    dropout_rate: float = 0.75
    epochs: int = 30
    seed: int = 0
    lr: float = 1e-3
    early_stop: bool = True

    def __post_init__(self):
        if self.neurons < 1:
            raise ValueError(f"neurons must be >= 1, got {self.neurons}")
        if self.n_places < 2:
            raise ValueError(f"n_places must be >= 2, got {self.n_places}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")

    @property
    def expanded_size(self) -> int:
        return INPUT_SIZE * self.neurons


@dataclass
class ScoreVector:
    scores: np.ndarray
    source_model: int = 0
    query_frame: int = -1

    def __len__(self) -> int:
        return len(self.scores)


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.accuracy[-1] if self.accuracy else float("nan")


class BaselineClassifier:
    def __init__(self, config: BaselineConfig, fc1: BinaryLatentMatrix | PackedBits,
                 fc2: BinaryLatentMatrix | PackedBits, model_id: int = 0):
        a, n = config.neurons, config.n_places
        self.config = config
        self.model_id = model_id
        self._latent1 = fc1 if isinstance(fc1, BinaryLatentMatrix) else None
        self._latent2 = fc2 if isinstance(fc2, BinaryLatentMatrix) else None
        self._packed1 = None if self._latent1 is not None else fc1
        self._packed2 = None if self._latent2 is not None else fc2
        if self.fc1_bits.rows != a or self.fc1_bits.cols != INPUT_SIZE:
            raise ValueError(f"fc1 must be ({a}, {INPUT_SIZE}), got ({self.fc1_bits.rows}, {self.fc1_bits.cols})")
        if self.fc2_bits.rows != n or self.fc2_bits.cols != INPUT_SIZE * a:
            raise ValueError(
                f"fc2 must be ({n}, {INPUT_SIZE * a}), got ({self.fc2_bits.rows}, {self.fc2_bits.cols})"
            )
        self._folded: np.ndarray | None = None

    @classmethod
    def init(cls, config: BaselineConfig, model_id: int = 0) -> "BaselineClassifier":
        """Latent weights drawn i.i.d. uniform on [-1, 1] from ``config.seed``."""
        rng = make_rng(config.seed)
        a, n = config.neurons, config.n_places
        fc1 = rng.uniform(-1.0, 1.0, size=(a, INPUT_SIZE)).astype(np.float32)
        fc2 = rng.uniform(-1.0, 1.0, size=(n, INPUT_SIZE * a)).astype(np.float32)
        return cls(config, BinaryLatentMatrix(fc1), BinaryLatentMatrix(fc2), model_id)

    @classmethod
    def init_frozen(cls, config: BaselineConfig, model_id: int = 0) -> "BaselineClassifier":
        """Random packed weights without latents, for benchmarks at full size."""
        rng = make_rng(config.seed)
        a, n = config.neurons, config.n_places
        bits1 = rng.random((a, INPUT_SIZE)) < 0.5
        words2 = rng.integers(0, 2**64, size=(n, INPUT_SIZE * a // 64), dtype=np.uint64)
        return cls(config, PackedBits.from_bool(bits1), PackedBits(n, INPUT_SIZE * a, words2), model_id)

    @property
    def n_places(self) -> int:
        return self.config.n_places

    @property
    def has_latent(self) -> bool:
        return self._latent1 is not None

    @property
    def fc1_bits(self) -> PackedBits:
        return self._latent1.packed if self._latent1 is not None else self._packed1

    @property
    def fc2_bits(self) -> PackedBits:
        return self._latent2.packed if self._latent2 is not None else self._packed2

    @property
    def fc1_latent(self) -> BinaryLatentMatrix | None:
        return self._latent1

    @property
    def fc2_latent(self) -> BinaryLatentMatrix | None:
        return self._latent2

    def packed_nbytes(self) -> int:
        return self.fc1_bits.flat_nbytes() + self.fc2_bits.flat_nbytes()

    def drop_latent(self) -> None:
        """Freeze: keep only the packed bits."""
        self._packed1, self._packed2 = self.fc1_bits, self.fc2_bits
        self._latent1 = self._latent2 = None

    def _invalidate(self) -> None:
        self._folded = None
        if self._latent1 is not None:
            self._latent1.mark_dirty()
            self._latent2.mark_dirty()

    # inference

    def folded_weights(self) -> np.ndarray:
        """Exact ``(N, 2048)`` integer-valued matrix equivalent to FC2 after FC1."""
        if self._folded is None:
            self._folded = fold_packed(self.fc1_bits, self.fc2_bits)
        return self._folded

    def forward(self, image: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> ScoreVector:
        x = _check_image(image)
        if not training or self.config.dropout_rate == 0.0:
            return ScoreVector(self.folded_weights() @ x, self.model_id)
        if rng is None:
            raise ValueError("training forward needs an rng for dropout")
        s1 = self.fc1_bits.signs(np.float64)
        e = (s1 * x).ravel()
        e *= dropout_mask(e.shape, self.config.dropout_rate, rng)
        s2 = self.fc2_bits.signs(np.float64)
        return ScoreVector(s2 @ e, self.model_id)

    def scores_batch(self, images: np.ndarray) -> np.ndarray:
        """Inference scores for a stack of frames, shape (n_frames, N)."""
        images = np.asarray(images, dtype=np.float64).reshape(-1, INPUT_SIZE)
        return images @ self.folded_weights().T

    def predict(self, image: np.ndarray) -> tuple[int, ScoreVector]:
        sv = self.forward(image)
        return int(np.argmax(sv.scores)), sv

    # training

    def train(self, frames: np.ndarray, epochs: int | None = None) -> TrainHistory:
        """Shuffled single-frame steps; frame ``n`` is labelled with place ``n``."""
        return train_baseline(self, frames, epochs)


def _check_image(image: np.ndarray) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64).reshape(-1)
    if x.shape[0] != INPUT_SIZE:
        raise ValueError(f"image must have {INPUT_SIZE} pixels, got {x.shape[0]}")
    return x


def fold_packed(fc1: PackedBits, fc2: PackedBits, chunk: int = 16) -> np.ndarray:
    s1 = fc1.signs(np.int8)
    a = fc1.rows
    n = fc2.rows
    folded = np.empty((n, INPUT_SIZE), dtype=np.float64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        part = PackedBits(stop - start, fc2.cols, fc2.words[start:stop])
        s2 = part.signs(np.int8).reshape(stop - start, a, INPUT_SIZE)
        folded[start:stop] = np.einsum("naj,aj->nj", s2, s1, dtype=np.int32)
    return folded


def training_accuracy(model: BaselineClassifier, frames: np.ndarray) -> float:
    preds = np.argmax(model.scores_batch(frames), axis=1)
    return float(np.mean(preds == np.arange(len(preds))))


def train_baseline(model: BaselineClassifier, frames: np.ndarray,
                   epochs: int | None = None) -> TrainHistory:
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    frames = np.asarray(frames, dtype=np.float64).reshape(-1, INPUT_SIZE)
    if frames.shape[0] != cfg.n_places:
        raise ValueError(f"traversal has {frames.shape[0]} frames, config expects {cfg.n_places}")
    if not model.has_latent:
        raise ValueError("model has no latent weights; it was loaded frozen")
    history = TrainHistory()
    if epochs == 0:
        return history

    rng = make_rng(cfg.seed + 0x5EED)
    w1 = model.fc1_latent.latent
    w2 = model.fc2_latent.latent
    opt1 = AdamState(w1.shape, lr=cfg.lr, dtype=np.float32)
    opt2 = AdamState(w2.shape, lr=cfg.lr, dtype=np.float32)
    xs = frames.astype(np.float32)
    for epoch in range(epochs):
        order = rng.permutation(cfg.n_places)
        total = 0.0
        for label in order:
            keep = rng.random(w1.size) >= cfg.dropout_rate
            total += _kernels.baseline_step(
                w1, w2, opt1, opt2, xs[label], keep, int(label), cfg.dropout_rate
            )
        model._invalidate()
        acc = training_accuracy(model, frames)
        history.loss.append(total / cfg.n_places)
        history.accuracy.append(acc)
        log.debug("baseline %d epoch %d loss %.4f acc %.3f", model.model_id, epoch, history.loss[-1], acc)
        if cfg.early_stop and acc == 1.0:
            break
    return history
