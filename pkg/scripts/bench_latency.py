"""Single-query latency and model size at full scale (N=1000, 192 neurons).

Builds systems with random frozen weights (timing does not depend on the
values), then times the full predict path on one thread.

    python3 scripts/bench_latency.py --places 1000 --neurons 192 --q 1 2 4
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from vprmerger.baseline import BaselineClassifier
from vprmerger.dataio import expected_size, save_system
from vprmerger.evaluation import bench_baseline_stage, bench_inference
from vprmerger.merger import MergerNet
from vprmerger.pipeline import SystemConfig, VprSystem


def build(n, a, q, w):
    cfg = SystemConfig(neurons=a, q=q, width=w)
    cls = [BaselineClassifier.init_frozen(cfg.baseline_config(n, i), model_id=i) for i in range(q)]
    merger = MergerNet.init(q, n, w)
    merger.round_to_float32()
    return VprSystem(cls, merger, cfg)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--places", type=int, default=1000)
    p.add_argument("--neurons", type=int, default=192)
    p.add_argument("--width", type=int, default=4)
    p.add_argument("--q", type=int, nargs="+", default=[2])
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=100)
    args = p.parse_args()

    images = np.random.default_rng(0).random((64, 32, 64))
    print(f"{'q':>3} {'mean ms':>9} {'median':>9} {'p99':>9} {'fps':>9} {'baselines ms':>13} {'size MB':>9}")
    with tempfile.TemporaryDirectory() as tmp:
        for q in args.q:
            system = build(args.places, args.neurons, q, args.width)
            path = Path(tmp) / f"q{q}.bmvr"
            size = save_system(system, path)
            assert size == expected_size(args.places, args.neurons, q, args.width)
            report = bench_inference(system, images, args.warmup, args.iters, model_path=path)
            stage = bench_baseline_stage(system, images)
            print(f"{q:>3} {report.mean_ms:>9.3f} {report.median_ms:>9.3f} {report.p99_ms:>9.3f} "
                  f"{report.fps:>9.1f} {stage:>13.3f} {size / 1e6:>9.2f}", flush=True)
    print("reference: 0.97 ms and 8.68 MB reported for the merger at N=1000 on an i9-12900K")


if __name__ == "__main__":
    main()
