#!/usr/bin/env python3
"""Render the bundled six-part sample form on the toy backend and export
tokens, manifest, and WAV."""

import argparse
import time
from pathlib import Path

from formgen.backends import ToyBackend
from formgen.forms import parse_form
from formgen.orchestrator import GenerationConfig, plan_piece, render_piece, write_manifest
from formgen.patterns import save_grid
from formgen.rvq import FrameRate, random_codec
from formgen.sampling import SamplerConfig
from formgen.synth import SynthConfig, export_wav

SAMPLE_FORM = Path(__file__).resolve().parents[1] / "fixtures" / "sample_form.txt"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--form", default=str(SAMPLE_FORM))
    parser.add_argument("--steps-per-second", type=int, default=75)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out", default="demo-out")
    args = parser.parse_args()

    spec = parse_form(Path(args.form).read_text())
    rate = FrameRate(args.steps_per_second)
    plan = plan_piece(spec, GenerationConfig(frame_rate=rate))
    backend = ToyBackend(num_codebooks=4, vocab_size=64, context_window=4)
    codec = random_codec(d=8, num_codebooks=4, codebook_size=64, seed=7)

    print(f"rendering {plan.total_steps} steps "
          f"({plan.total_steps / rate.steps_per_second:.0f} s of audio)...")
    t0 = time.perf_counter()
    artifact = render_piece(plan, backend, codec, SamplerConfig(seed=args.seed))
    print(f"done in {time.perf_counter() - t0:.1f}s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(artifact, out / "manifest.json")
    save_grid(out / "piece.tokens", artifact.grid, codec.codebook_size)
    export_wav(artifact.frames, out / "piece.wav",
               SynthConfig(steps_per_second=rate.steps_per_second))
    for part in artifact.manifest["parts"]:
        ref = f" (varies part {part['referenced_part']})" if part["referenced_part"] != -1 else ""
        print(f"  part {part['index']}: steps {part['start_step']}..{part['end_step']}{ref}")
    print(f"grid sha256: {artifact.manifest['grid_sha256']}")
    print(f"artifacts in {out}/")


if __name__ == "__main__":
    main()
