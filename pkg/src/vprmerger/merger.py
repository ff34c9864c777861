"""One-dimensional convolutional merger.

The q score vectors of a query are stacked into a ``(q, N)`` score matrix. A
full-height ``(q, w)`` kernel slides along the place axis (valid
cross-correlation, ``l = N + 1 - w`` outputs), followed by ReLU and a dense
``(l, N)`` layer producing the final place scores. No biases anywhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .nn_core import AdamState, adam_step, dropout_mask, make_rng, softmax, softmax_ce

log = logging.getLogger(__name__)


def conv_output_length(n_places: int, width: int) -> int:
    if not 1 <= width <= n_places:
        raise ValueError(f"kernel width {width} must be in [1, {n_places}]")
    return n_places + 1 - width


def conv1d_full_height(scores: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """``t[i] = sum_{a,k} theta[a, k] * scores[a, i + k]`` for ``i < N + 1 - w``."""
    scores = np.asarray(scores, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if scores.ndim != 2 or theta.ndim != 2 or scores.shape[0] != theta.shape[0]:
        raise ValueError(f"score matrix {scores.shape} and kernel {theta.shape} disagree on q")
    conv_output_length(scores.shape[1], theta.shape[1])
    windows = sliding_window_view(scores, theta.shape[1], axis=1)  # (q, l, w)
    return np.einsum("qlw,qw->l", windows, theta)


@dataclass
class MergerOutput:
    t: np.ndarray
    o: np.ndarray
    predicted: int
    confidence: float


@dataclass
class MergerHistory:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)


class MergerNet:
    def __init__(self, theta: np.ndarray, F: np.ndarray, dropout_rate: float = 0.30):
        theta = np.asarray(theta, dtype=np.float64)
        F = np.asarray(F, dtype=np.float64)
        q, w = theta.shape
        l, n = F.shape
        if l != conv_output_length(n, w):
            raise ValueError(f"F has {l} rows, expected N + 1 - w = {n + 1 - w}")
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {dropout_rate}")
        self.theta = theta
        self.F = F
        self.dropout_rate = dropout_rate

    @classmethod
    def init(cls, q: int, n_places: int, width: int = 4, dropout_rate: float = 0.30,
             seed: int = 0) -> "MergerNet":
        """Uniform init on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` for both layers."""
        if q < 1:
            raise ValueError(f"q must be >= 1, got {q}")
        l = conv_output_length(n_places, width)
        rng = make_rng(seed)
        s_theta = 1.0 / np.sqrt(q * width)
        s_f = 1.0 / np.sqrt(l)
        theta = rng.uniform(-s_theta, s_theta, size=(q, width))
        F = rng.uniform(-s_f, s_f, size=(l, n_places))
        return cls(theta, F, dropout_rate)

    @property
    def q(self) -> int:
        return self.theta.shape[0]

    @property
    def width(self) -> int:
        return self.theta.shape[1]

    @property
    def n_places(self) -> int:
        return self.F.shape[1]

    def _check(self, scores: np.ndarray) -> np.ndarray:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (self.q, self.n_places):
            raise ValueError(f"score matrix must be {(self.q, self.n_places)}, got {scores.shape}")
        return scores

    def forward(self, scores: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> MergerOutput:
        scores = self._check(scores)
        t = conv1d_full_height(scores, self.theta)
        h = np.maximum(t, 0.0)
        if training and self.dropout_rate > 0.0:
            if rng is None:
                raise ValueError("training forward needs an rng for dropout")
            h = h * dropout_mask(h.shape, self.dropout_rate, rng)
        o = h @ self.F
        return MergerOutput(t, o, int(np.argmax(o)), float(softmax(o).max()))

    def predict(self, scores: np.ndarray) -> tuple[int, float]:
        out = self.forward(scores)
        return out.predicted, out.confidence

    def predict_batch(self, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised predict over ``(n, q, N)``; returns places and confidences."""
        scores = np.asarray(scores, dtype=np.float64)
        windows = sliding_window_view(scores, self.width, axis=2)  # (n, q, l, w)
        t = np.einsum("nqlw,qw->nl", windows, self.theta)
        o = np.maximum(t, 0.0) @ self.F
        z = np.exp(o - o.max(axis=1, keepdims=True))
        conf = (z / z.sum(axis=1, keepdims=True)).max(axis=1)
        return np.argmax(o, axis=1), conf

    def loss_and_grads(self, scores: np.ndarray, label: int,
                       mask: np.ndarray | None = None) -> tuple[float, np.ndarray, np.ndarray]:
        """Cross-entropy on ``o`` and exact gradients w.r.t. ``theta`` and ``F``.

        ``mask`` is an inverted-dropout multiplier on ``ReLU(t)``; None means
        no dropout.
        """
        scores = self._check(scores)
        windows = sliding_window_view(scores, self.width, axis=1)
        t = np.einsum("qlw,qw->l", windows, self.theta)
        active = t > 0.0
        h = np.where(active, t, 0.0)
        if mask is not None:
            h = h * mask
        loss, g = softmax_ce(h @ self.F, label)
        grad_F = np.outer(h, g)
        grad_t = self.F @ g
        if mask is not None:
            grad_t *= mask
        grad_t *= active
        grad_theta = np.einsum("qlw,l->qw", windows, grad_t)
        return loss, grad_theta, grad_F

    def round_to_float32(self) -> None:
        """Snap weights to float32 values so the stored model reproduces inference exactly."""
        self.theta = self.theta.astype(np.float32).astype(np.float64)
        self.F = self.F.astype(np.float32).astype(np.float64)

    def copy(self) -> "MergerNet":
        return MergerNet(self.theta.copy(), self.F.copy(), self.dropout_rate)


def merger_train(net: MergerNet, scores: np.ndarray, labels: np.ndarray, epochs: int = 100,
                 seed: int = 0, lr: float = 1e-3) -> MergerHistory:
    """Shuffled per-sample Adam steps over a fixed set of score matrices."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 3 or scores.shape[1:] != (net.q, net.n_places):
        raise ValueError(f"samples must be (n, {net.q}, {net.n_places}), got {scores.shape}")
    if labels.shape != (scores.shape[0],):
        raise ValueError("need exactly one label per sample")
    if labels.size and (labels.min() < 0 or labels.max() >= net.n_places):
        raise ValueError("labels must lie in [0, N)")
    history = MergerHistory()
    if epochs == 0 or scores.shape[0] == 0:
        return history

    rng = make_rng(seed)
    opt_theta = AdamState(net.theta.shape, lr=lr)
    opt_F = AdamState(net.F.shape, lr=lr)
    l = net.F.shape[0]
    for epoch in range(epochs):
        total = 0.0
        for idx in rng.permutation(scores.shape[0]):
            mask = dropout_mask(l, net.dropout_rate, rng) if net.dropout_rate > 0 else None
            loss, g_theta, g_F = net.loss_and_grads(scores[idx], int(labels[idx]), mask)
            total += loss
            adam_step(net.theta, g_theta, opt_theta)
            adam_step(net.F, g_F, opt_F)
        pred, _ = net.predict_batch(scores)
        history.loss.append(total / scores.shape[0])
        history.accuracy.append(float(np.mean(pred == labels)))
        log.debug("merger epoch %d loss %.4f acc %.3f", epoch, history.loss[-1], history.accuracy[-1])
    return history
