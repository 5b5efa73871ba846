"""Time prediction (no file I/O) of the full-size network and both baselines on 128x128x16 blocks.

    python3 scripts/benchmark_prediction.py --blocks 4
"""

import argparse
import time

from stpconv.baselines import predict_block_mean, predict_time_interp
from stpconv.blocks import generate_synthetic
from stpconv.experiment import desk_synthetic
from stpconv.maskgen import GapConfig, apply_gaps, make_gap_mask
from stpconv.model import ModelSpec, build, predict


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--blocks", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    blocks = generate_synthetic(args.blocks, (128, 128, 16, 1), desk_synthetic(), seed=7)
    gaps = GapConfig(seed=1)
    inputs = [apply_gaps(b, make_gap_mask(b.shape, gaps, block_id=i))[0] for i, b in enumerate(blocks)]
    spec = ModelSpec.full_size()
    state = build(spec)
    methods = {
        "mean": predict_block_mean,
        "interp": predict_time_interp,
        "stpconv": lambda b: predict(state, spec, b),
    }
    print(f"{state.n_params} parameters; {args.blocks} blocks of 128x128x16")
    for name, fn in methods.items():
        best = float("inf")
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            for b in inputs:
                fn(b)
            best = min(best, time.perf_counter() - t0)
        print(f"{name:8s} {best / args.blocks * 1000:8.1f} ms per block")


if __name__ == "__main__":
    main()
