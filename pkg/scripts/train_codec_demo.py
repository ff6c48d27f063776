#!/usr/bin/env python3
"""Train RVQ codebooks on a synthetic frame corpus and report the
per-stage Lloyd error traces (non-increasing by construction)."""

import argparse

import numpy as np

from formgen.rvq import TrainingLog, codec_hash, save_codec, train_codebooks


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frames", type=int, default=5000)
    parser.add_argument("--dim", type=int, default=8)
    parser.add_argument("--codebooks", type=int, default=4)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--iters", type=int, default=25)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="write the trained codec container here")
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    # a lumpy corpus: mixture of gaussians, closer to real latents than iid noise
    centers = rng.normal(scale=2.0, size=(12, args.dim))
    assignments = rng.integers(0, len(centers), size=args.frames)
    frames = centers[assignments] + rng.normal(scale=0.4, size=(args.frames, args.dim))

    log = TrainingLog()
    codec = train_codebooks(
        frames,
        num_codebooks=args.codebooks,
        codebook_size=args.size,
        max_iters=args.iters,
        seed=args.seed,
        log=log,
    )
    for i, stage in enumerate(log.stages, start=1):
        first, last = stage.errors[0], stage.errors[-1]
        print(
            f"stage {i}: {len(stage.errors):2d} iterations, "
            f"error {first:.5f} -> {last:.5f}"
        )
    print(f"codec sha256: {codec_hash(codec)}")
    if args.out:
        save_codec(codec, args.out)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
