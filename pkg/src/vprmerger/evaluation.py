"""Match scoring, precision-recall curves and latency benchmarks."""

from __future__ import annotations

import csv
import io
import statistics
import time
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .pipeline import VprSystem, as_frames

# ground-truth tolerance in frames for the usual benchmark datasets
TOLERANCE_PROFILES = {"nordland": 1, "gardens": 2, "robotcar": 10}


@dataclass
class MatchResult:
    query_frame: int
    predicted_place: int
    confidence: float
    correct: bool

    @classmethod
    def score(cls, query_frame: int, predicted: int, confidence: float, tolerance: int) -> "MatchResult":
        return cls(query_frame, predicted, confidence, abs(predicted - query_frame) <= tolerance)


@dataclass
class PrCurve:
    """Points in sweep order (decreasing threshold); ``recall`` is non-decreasing."""

    thresholds: list[float] = field(default_factory=list)
    precision: list[float] = field(default_factory=list)
    recall: list[float] = field(default_factory=list)
    auc: float = 0.0
    degenerate: bool = False

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.precision, self.recall))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["threshold", "precision", "recall"])
        for t, p, r in zip(self.thresholds, self.precision, self.recall):
            writer.writerow([repr(float(t)), repr(float(p)), repr(float(r))])
        return buf.getvalue()


def pr_curve(results: list[MatchResult]) -> PrCurve:
    """Sweep a threshold over every distinct confidence, highest first.

    Equal confidences enter the curve together as one step. AUC is the
    trapezoidal area over recall, with the curve extended to recall 0 at the
    first point's precision.
    """
    if not results:
        raise ValueError("pr_curve needs at least one result")
    conf = np.array([r.confidence for r in results], dtype=np.float64)
    if not np.all(np.isfinite(conf)):
        raise ValueError("confidences must be finite")
    correct = np.array([r.correct for r in results], dtype=bool)
    order = np.argsort(-conf, kind="stable")
    conf, correct = conf[order], correct[order]
    total_correct = int(correct.sum())

    # last index of each run of equal confidence
    ends = np.flatnonzero(np.append(conf[1:] != conf[:-1], True))
    tp = np.cumsum(correct)[ends]
    selected = ends + 1
    curve = PrCurve(thresholds=conf[ends].tolist())
    curve.precision = (tp / selected).tolist()
    if total_correct == 0:
        curve.recall = [0.0] * len(ends)
        curve.degenerate = True
        curve.auc = 0.0
        return curve
    curve.recall = (tp / total_correct).tolist()
    curve.auc = _trapezoid_auc(tp.tolist(), selected.tolist(), total_correct)
    return curve


def _trapezoid_auc(tp: list[int], selected: list[int], total_correct: int) -> float:
    # every point is a ratio of counts, so sum exactly and round once
    prev_r = Fraction(0)
    prev_p = Fraction(tp[0], selected[0])
    area = Fraction(0)
    for t, s in zip(tp, selected):
        r, p = Fraction(t, total_correct), Fraction(t, s)
        area += (r - prev_r) * (p + prev_p) / 2
        prev_r, prev_p = r, p
    return float(area)


def match_results(places: np.ndarray, confidences: np.ndarray, tolerance: int) -> list[MatchResult]:
    return [
        MatchResult.score(i, int(p), float(c), tolerance)
        for i, (p, c) in enumerate(zip(places, confidences))
    ]


def accuracy(results: list[MatchResult]) -> float:
    return float(np.mean([r.correct for r in results]))


def evaluate(system: VprSystem, reference: np.ndarray, query: np.ndarray,
             tolerance: int = 0) -> tuple[PrCurve, float, list[MatchResult]]:
    """Query frame ``i`` is ground-truth place ``i``."""
    reference, query = as_frames(reference), as_frames(query)
    n = system.n_places
    if reference.shape[0] != n or query.shape[0] != n:
        raise ValueError(
            f"traversal lengths (reference {reference.shape[0]}, query {query.shape[0]}) "
            f"must equal the model's N={n}"
        )
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    places, conf = system.predict_batch(query)
    results = match_results(places, conf, tolerance)
    return pr_curve(results), accuracy(results), results


@dataclass
class BenchReport:
    mean_ms: float
    median_ms: float
    p99_ms: float
    fps: float
    model_bytes: int
    iters: int

    def to_kv(self) -> dict[str, str]:
        return {
            "mean_ms": f"{self.mean_ms:.6f}",
            "median_ms": f"{self.median_ms:.6f}",
            "p99_ms": f"{self.p99_ms:.6f}",
            "fps": f"{self.fps:.3f}",
            "model_bytes": str(self.model_bytes),
            "model_mb": f"{self.model_bytes / 1e6:.3f}",
            "iters": str(self.iters),
        }

    def to_text(self) -> str:
        return (
            f"inference time  mean {self.mean_ms:.3f} ms  median {self.median_ms:.3f} ms  "
            f"p99 {self.p99_ms:.3f} ms  ({self.iters} iters)\n"
            f"throughput      {self.fps:.1f} fps\n"
            f"model size      {self.model_bytes} bytes ({self.model_bytes / 1e6:.2f} MB)"
        )


def summarize_latency(samples_ms: list[float], model_bytes: int) -> BenchReport:
    arr = np.asarray(samples_ms, dtype=np.float64)
    mean = float(arr.mean())
    return BenchReport(
        mean_ms=mean,
        median_ms=float(statistics.median(samples_ms)),
        p99_ms=float(np.percentile(arr, 99, method="higher")),
        fps=1000.0 / mean if mean > 0 else float("inf"),
        model_bytes=model_bytes,
        iters=len(samples_ms),
    )


def time_calls(fn, inputs: np.ndarray, warmup: int, iters: int) -> list[float]:
    """Per-call wall-clock milliseconds, cycling through ``inputs``."""
    n = len(inputs)
    for i in range(warmup):
        fn(inputs[i % n])
    samples = []
    for i in range(iters):
        x = inputs[i % n]
        t0 = time.perf_counter()
        fn(x)
        samples.append((time.perf_counter() - t0) * 1e3)
    return samples


def bench_inference(system: VprSystem, images: np.ndarray, warmup: int = 100, iters: int = 1000,
                    model_path: str | Path | None = None) -> BenchReport:
    """Latency of the full single-query predict path, pinned to one BLAS thread.

    Model size is the on-disk size of ``model_path`` when given, else the
    size the system would serialize to.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    images = as_frames(images)
    for c in system.classifiers:
        c.folded_weights()
    with threadpool_limits(limits=1):
        samples = time_calls(system.predict, images, warmup, iters)
    if model_path is not None:
        size = Path(model_path).stat().st_size
    else:
        from .dataio import dump_system

        size = len(dump_system(system))
    return summarize_latency(samples, size)


def bench_baseline_stage(system: VprSystem, images: np.ndarray, warmup: int = 20,
                         iters: int = 200) -> float:
    """Mean ms of the q classifier forwards alone."""
    images = as_frames(images)
    with threadpool_limits(limits=1):
        samples = time_calls(system.score_matrix, images, warmup, iters)
    return float(np.mean(samples))


def write_kv(path: str | Path, values: dict[str, str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))


def read_kv(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out
