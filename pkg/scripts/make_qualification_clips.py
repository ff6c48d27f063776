#!/usr/bin/env python3
"""Generate the 10 qualification clips for a listening study: 3 clips with
an instructed score (a beep pattern mid-clip encodes the expected score),
1 minute of silence, and 6 plain tone clips."""

import argparse
import json
from pathlib import Path

import numpy as np

from formgen.service import default_qualification_spec
from formgen.synth import SynthConfig, beep_pattern_wav, export_wav, silence_wav


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="clips")
    parser.add_argument("--seconds", type=float, default=60.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = default_qualification_spec()
    rng = np.random.default_rng(args.seed)

    margin = min(10.0, args.seconds / 4.0)
    for clip_id, expected in spec.instructed.items():
        at = float(rng.uniform(margin, args.seconds - margin))
        beep_pattern_wav(out / f"{clip_id}.wav", num_beeps=expected,
                         seconds=args.seconds, at_second=at)
        print(f"{clip_id}: {expected} beeps at {at:.1f}s")

    silence_wav(out / f"{spec.silence_clip_id}.wav", args.seconds)
    print(f"{spec.silence_clip_id}: {args.seconds:.0f}s of silence")

    cfg = SynthConfig(steps_per_second=5)
    steps = int(args.seconds * cfg.steps_per_second)
    for clip_id in spec.plain_clip_ids:
        frames = 0.3 * np.abs(rng.normal(size=(steps, 4)))
        export_wav(frames, out / f"{clip_id}.wav", cfg)
        print(f"{clip_id}: plain tone clip")

    plan = {
        "instructed": spec.instructed,
        "silence_clip_id": spec.silence_clip_id,
        "plain_clip_ids": list(spec.plain_clip_ids),
    }
    (out / "qualification_plan.json").write_text(json.dumps(plan, indent=2))
    print(f"clips and plan in {out}/")


if __name__ == "__main__":
    main()
