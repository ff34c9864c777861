"""Traversal loading and the binary model file.

Model file layout (all little-endian)::

    header     HEADER struct below, starting with b"BMVR"
    per classifier i < q:
        fc1 bits   ceil(2048*a / 8) bytes, row-major (neuron, pixel), LSB first
        fc2 bits   ceil(2048*a*N / 8) bytes, row-major (place, expanded input)
    if FLAG_LATENT, per classifier:
        fc1 latent 2048*a float32, fc2 latent 2048*a*N float32
    merger theta   q*w float32, row-major
    merger F       (N+1-w)*N float32, row-major
    crc32          uint32 over every preceding byte
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .baseline import INPUT_HEIGHT, INPUT_SIZE, INPUT_WIDTH, BaselineClassifier
from .merger import MergerNet, conv_output_length
from .nn_core import BinaryLatentMatrix, PackedBits
from .pipeline import SystemConfig, VprSystem

MAGIC = b"BMVR"
FORMAT_VERSION = 1
FLAG_LATENT = 0x1

# magic, version, flags, N, a, q, w, baseline dropout, merger dropout,
# baseline epochs, merger epochs, copies per frame, clean copies, base seed, baseline lr, merger lr
HEADER = struct.Struct("<4sHHIIIIddIIIIqdd")
CRC = struct.Struct("<I")

IMAGE_SUFFIXES = {".pgm", ".pbm", ".ppm", ".pnm", ".png", ".bmp", ".tif", ".tiff"}
LUMA = np.array([0.299, 0.587, 0.114])


class ModelFileError(ValueError):
    pass


class BadMagicError(ModelFileError):
    pass


class UnsupportedVersionError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class TraversalError(ValueError):
    pass


@dataclass
class Traversal:
    name: str
    frames: np.ndarray  # (n, 32, 64) in [0, 1]
    paths: list[Path] = field(default_factory=list)

    def __len__(self) -> int:
        return self.frames.shape[0]


def to_gray(img: Image.Image) -> np.ndarray:
    """Float grayscale in [0, 1] using 0.299/0.587/0.114 luminance weights."""
    mode = img.mode
    if mode == "L":
        return np.asarray(img, dtype=np.float64) / 255.0
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64)
        return arr / (65535.0 if arr.max() > 255 or mode.startswith("I;16") else 255.0)
    if mode == "F":
        return np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if mode == "LA":
        return np.asarray(img.getchannel("L"), dtype=np.float64) / 255.0
    rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return rgb @ LUMA


def resize(gray: np.ndarray, width: int = INPUT_WIDTH, height: int = INPUT_HEIGHT) -> np.ndarray:
    """Area-average when shrinking in both axes, bilinear otherwise."""
    h, w = gray.shape
    if (h, w) == (height, width):
        return gray.astype(np.float64, copy=True)
    resample = Image.BOX if (w >= width and h >= height) else Image.BILINEAR
    img = Image.fromarray(gray.astype(np.float32), mode="F").resize((width, height), resample)
    return np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)


def load_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            gray = to_gray(img)
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise TraversalError(f"cannot read image {path}: {exc}") from exc
    return resize(gray)


def list_images(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise TraversalError(f"traversal directory {directory} does not exist")
    return sorted((p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES), key=lambda p: p.name)


def load_traversal(directory: str | Path) -> Traversal:
    """Frames ordered by file name; frame index is the place label."""
    paths = list_images(directory)
    if not paths:
        raise TraversalError(f"no images found in {directory}")
    frames = np.stack([load_image(p) for p in paths])
    return Traversal(Path(directory).name, frames, paths)


def save_traversal(frames: np.ndarray, directory: str | Path, suffix: str = ".pgm") -> list[Path]:
    """Write frames as 8-bit images named ``000000.pgm``, ``000001.pgm``, ..."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(np.asarray(frames)):
        levels = np.floor(np.clip(frame, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        path = directory / f"{i:06d}{suffix}"
        Image.fromarray(levels.reshape(INPUT_HEIGHT, INPUT_WIDTH), mode="L").save(path)
        paths.append(path)
    return paths


# model file


def expected_size(n_places: int, neurons: int, q: int, width: int, latent: bool = False) -> int:
    """Exact byte size of a model file with these dimensions."""
    b = INPUT_SIZE * neurons
    size = HEADER.size + q * (-(-b // 8) + -(-(b * n_places) // 8))
    if latent:
        size += 4 * q * (b + b * n_places)
    size += 4 * (q * width + conv_output_length(n_places, width) * n_places)
    return size + CRC.size


def dump_system(system: VprSystem, include_latent: bool = False) -> bytes:
    cfg = system.config
    n = system.n_places
    a = cfg.neurons
    if include_latent and not all(c.has_latent for c in system.classifiers):
        raise ValueError("cannot store latent weights: the classifiers are frozen")
    header = HEADER.pack(
        MAGIC, FORMAT_VERSION, FLAG_LATENT if include_latent else 0,
        n, a, cfg.q, cfg.width, cfg.baseline_dropout, cfg.merger_dropout,
        cfg.baseline_epochs, cfg.merger_epochs, cfg.copies_per_frame, cfg.clean_copies, cfg.base_seed,
        cfg.baseline_lr, cfg.merger_lr,
    )
    parts = [header]
    for c in system.classifiers:
        parts.append(c.fc1_bits.to_flat_bytes())
        parts.append(c.fc2_bits.to_flat_bytes())
    if include_latent:
        for c in system.classifiers:
            parts.append(c.fc1_latent.latent.astype("<f4").tobytes())
            parts.append(c.fc2_latent.latent.astype("<f4").tobytes())
    parts.append(system.merger.theta.astype("<f4").tobytes())
    parts.append(system.merger.F.astype("<f4").tobytes())
    payload = b"".join(parts)
    return payload + CRC.pack(zlib.crc32(payload))


def save_system(system: VprSystem, path: str | Path, include_latent: bool = False) -> int:
    """Write atomically (temp file + rename); returns the byte size."""
    data = dump_system(system, include_latent)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return len(data)


def parse_system(data: bytes) -> VprSystem:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a model file (bad magic bytes)")
    if len(data) < 6:
        raise ChecksumError("model file truncated")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"model file version {version}, expected {FORMAT_VERSION}")
    if len(data) < HEADER.size + CRC.size:
        raise ChecksumError("model file truncated")
    payload, (stored_crc,) = data[:-CRC.size], CRC.unpack(data[-CRC.size:])
    if zlib.crc32(payload) != stored_crc:
        raise ChecksumError("model file checksum mismatch (corrupt or truncated)")

    (_, _, flags, n, a, q, w, b_drop, m_drop, b_epochs, m_epochs, copies, clean, seed,
     b_lr, m_lr) = HEADER.unpack_from(payload, 0)
    config = SystemConfig(
        neurons=a, baseline_dropout=float(b_drop), baseline_epochs=b_epochs, baseline_lr=b_lr,
        q=q, width=w, merger_dropout=float(m_drop), merger_epochs=m_epochs, merger_lr=m_lr,
        copies_per_frame=copies, clean_copies=clean, base_seed=seed,
    )
    latent = bool(flags & FLAG_LATENT)
    if len(data) != expected_size(n, a, q, w, latent):
        raise ModelFileError(f"model file is {len(data)} bytes, header implies {expected_size(n, a, q, w, latent)}")

    b = INPUT_SIZE * a
    pos = HEADER.size
    bits = []
    for _ in range(q):
        n1, n2 = -(-b // 8), -(-(b * n) // 8)
        fc1 = PackedBits.from_flat_bytes(payload[pos:pos + n1], a, INPUT_SIZE)
        pos += n1
        fc2 = PackedBits.from_flat_bytes(payload[pos:pos + n2], n, b)
        pos += n2
        bits.append((fc1, fc2))
    classifiers = []
    for i, (fc1, fc2) in enumerate(bits):
        if latent:
            l1 = np.frombuffer(payload, "<f4", b, pos).reshape(a, INPUT_SIZE)
            pos += 4 * b
            l2 = np.frombuffer(payload, "<f4", b * n, pos).reshape(n, b)
            pos += 4 * b * n
            fc1, fc2 = BinaryLatentMatrix(l1.copy()), BinaryLatentMatrix(l2.copy())
        classifiers.append(BaselineClassifier(config.baseline_config(n, i), fc1, fc2, model_id=i))
    l = conv_output_length(n, w)
    theta = np.frombuffer(payload, "<f4", q * w, pos).reshape(q, w).astype(np.float64)
    pos += 4 * q * w
    F = np.frombuffer(payload, "<f4", l * n, pos).reshape(l, n).astype(np.float64)
    merger = MergerNet(theta, F, float(m_drop))
    return VprSystem(classifiers, merger, config)


def load_system(path: str | Path) -> VprSystem:
    return parse_system(Path(path).read_bytes())
