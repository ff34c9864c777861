"""Small numeric kernel shared by the baseline classifier and the merger.

Everything is hand-written on top of numpy: bit-packed sign matrices, the
straight-through estimator, inverted dropout, softmax cross-entropy and Adam.
Gradients are derived per layer by the callers; there is no autograd engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WORD_BITS = 64


def make_rng(seed: int) -> np.random.Generator:
    """Return the project-wide PRNG: numpy's ``Generator`` over explicit PCG64.

    The bit generator is named rather than left to ``default_rng`` so that a
    seed means the same stream regardless of numpy's future default.
    """
    return np.random.Generator(np.random.PCG64(seed))


def _words_per_row(cols: int) -> int:
    return -(-cols // WORD_BITS)


@dataclass
class PackedBits:
    """Row-major bit matrix stored in 64-bit words, LSB first within a word.

    A set bit means a ``+1`` weight, a clear bit ``-1``. Pad bits at the end
    of each row are always zero.
    """

    rows: int
    cols: int
    words: np.ndarray  # uint64, shape (rows, ceil(cols / 64))

    @classmethod
    def from_bool(cls, bits: np.ndarray) -> "PackedBits":
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError(f"expected a 2-D bit matrix, got shape {bits.shape}")
        rows, cols = bits.shape
        wpr = _words_per_row(cols)
        padded = np.zeros((rows, wpr * WORD_BITS), dtype=bool)
        padded[:, :cols] = bits
        packed = np.packbits(padded, axis=1, bitorder="little")
        words = packed.view("<u8").astype(np.uint64, copy=False).reshape(rows, wpr)
        return cls(rows, cols, np.ascontiguousarray(words))

    def unpack(self) -> np.ndarray:
        """Bool matrix of shape (rows, cols); True where the weight is +1."""
        as_bytes = np.ascontiguousarray(self.words).astype("<u8", copy=False).view(np.uint8)
        bits = np.unpackbits(as_bytes.reshape(self.rows, -1), axis=1, bitorder="little")
        return bits[:, : self.cols].astype(bool)

    def signs(self, dtype=np.int8) -> np.ndarray:
        return np.where(self.unpack(), 1, -1).astype(dtype)

    def flat_nbytes(self) -> int:
        return -(-(self.rows * self.cols) // 8)

    def to_flat_bytes(self) -> bytes:
        """Unpadded bit stream (row-major, LSB first) used by the model file."""
        if self.cols % WORD_BITS == 0:
            return self.words.astype("<u8", copy=False).tobytes()
        return np.packbits(self.unpack().ravel(), bitorder="little").tobytes()

    @classmethod
    def from_flat_bytes(cls, buf: bytes, rows: int, cols: int) -> "PackedBits":
        n = rows * cols
        if cols % WORD_BITS == 0 and len(buf) == n // 8:
            words = np.frombuffer(buf, dtype="<u8").astype(np.uint64).reshape(rows, cols // WORD_BITS)
            return cls(rows, cols, words)
        flat = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
        if flat.size < n:
            raise ValueError(f"bit stream holds {flat.size} bits, need {n}")
        return cls.from_bool(flat[:n].reshape(rows, cols).astype(bool))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PackedBits):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and np.array_equal(self.words, other.words)
        )


class BinaryLatentMatrix:
    """Real-valued latent weights in [-1, 1] whose signs are the binary weights.

    The packed view is rebuilt lazily after ``mark_dirty`` so reads are always
    consistent with ``latent``.
    """

    def __init__(self, latent: np.ndarray):
        latent = np.asarray(latent, dtype=np.float32)
        if latent.ndim != 2:
            raise ValueError(f"expected a 2-D latent matrix, got shape {latent.shape}")
        np.clip(latent, -1.0, 1.0, out=latent)
        self.latent = latent
        self._packed: PackedBits | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.latent.shape

    @property
    def packed(self) -> PackedBits:
        if self._packed is None:
            self._packed = PackedBits.from_bool(self.latent >= 0)
        return self._packed

    def mark_dirty(self) -> None:
        self._packed = None


def binarize(latent: np.ndarray | BinaryLatentMatrix) -> np.ndarray:
    """Sign with ties to +1, returned as int8 in {-1, +1}."""
    if isinstance(latent, BinaryLatentMatrix):
        latent = latent.latent
    latent = np.asarray(latent)
    assert np.all(np.abs(latent) <= 1.0), "latent weights must be clamped to [-1, 1]"
    return np.where(latent >= 0, 1, -1).astype(np.int8)


def packed_matvec(weights: PackedBits, x: np.ndarray) -> np.ndarray:
    """``signs(weights) @ x`` evaluated as ``2 * (sum of x over set bits) - sum(x)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != weights.cols:
        raise ValueError(f"x has shape {x.shape}, weights have {weights.cols} columns")
    positive = weights.unpack().astype(np.float64) @ x
    return 2.0 * positive - x.sum()


def ste_grad(upstream: np.ndarray, latent: np.ndarray | BinaryLatentMatrix) -> np.ndarray:
    """Straight-through gradient: pass where ``|latent| <= 1``, zero elsewhere."""
    if isinstance(latent, BinaryLatentMatrix):
        latent = latent.latent
    upstream = np.asarray(upstream)
    if upstream.shape != np.shape(latent):
        raise ValueError(f"shape mismatch: {upstream.shape} vs {np.shape(latent)}")
    return upstream * (np.abs(latent) <= 1.0)


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) * dtype(1.0 / (1.0 - rate))


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator, training: bool) -> np.ndarray:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x)
    if not training or rate == 0.0:
        return x
    return x * dropout_mask(x.shape, rate, rng, dtype=x.dtype.type)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = np.exp(z - z.max())
    return z / z.sum()


def softmax_ce(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of ``softmax(logits)`` against ``label`` and its gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[0]:
        raise IndexError(f"label {label} out of range for {logits.shape[0]} classes")
    shifted = logits - logits.max()
    log_z = np.log(np.exp(shifted).sum())
    loss = float(log_z - shifted[label])
    grad = np.exp(shifted - log_z)
    grad[label] -= 1.0
    return loss, grad


@dataclass
class AdamState:
    shape: tuple[int, ...]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dtype: type = np.float64
    step: int = 0
    m: np.ndarray = field(init=False, repr=False)
    v: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.shape = tuple(self.shape)
        self.m = np.zeros(self.shape, dtype=self.dtype)
        self.v = np.zeros(self.shape, dtype=self.dtype)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, clamp: bool = False) -> np.ndarray:
    """In-place Adam update of ``param``; ``clamp`` re-projects onto [-1, 1]."""
    if param.shape != state.shape or grad.shape != state.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}, state {state.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * np.square(grad)
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    denom = np.sqrt(state.v / bc2)
    denom += state.eps
    param -= (state.lr / bc1) * state.m / denom
    if clamp:
        np.clip(param, -1.0, 1.0, out=param)
    return param
