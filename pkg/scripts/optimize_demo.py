#!/usr/bin/env python3
"""Run the full two-phase prompt optimization at desk scale: scripted LLM
fixtures, the simulated rater, and a fast engine. Prints the exploration
score histogram and the top-5 trajectory."""

import argparse
import json
from pathlib import Path

from formgen.backends import ToyBackend
from formgen.optimizer import (
    CandidatePrompt,
    OptimizerConfig,
    OptimizerState,
    ORIGIN_SEED,
    ScriptedLlmClient,
    SimulatedRater,
    exploration_histogram,
    render_histogram,
    render_trajectory,
    run_optimization,
)
from formgen.orchestrator import GenerationConfig, RenderEngine
from formgen.rvq import FrameRate, random_codec

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--iterations", type=int, default=20)
    parser.add_argument("--out", default="opt-demo-out")
    args = parser.parse_args()

    fixture = json.loads((FIXTURES / "llm_fixture.json").read_text())
    po = ScriptedLlmClient(responses=fixture["po"]["responses"],
                           cycle=fixture["po"].get("cycle", False))
    mp = ScriptedLlmClient(responses=fixture["mp"]["responses"],
                           cycle=fixture["mp"].get("cycle", False))
    seed_prompt = (FIXTURES / "seed_prompt.txt").read_text().strip()

    engine = RenderEngine(
        backend=ToyBackend(num_codebooks=2, vocab_size=16, context_window=2),
        codec=random_codec(d=4, num_codebooks=2, codebook_size=16, seed=3),
        config=GenerationConfig(frame_rate=FrameRate(1)),
    )
    config = OptimizerConfig(max_iterations=args.iterations, seed=args.seed)
    state = OptimizerState(
        seed_prompt=CandidatePrompt(text=seed_prompt, origin=ORIGIN_SEED), config=config
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = run_optimization(state, po, mp, engine, SimulatedRater(seed=args.seed),
                             out / "state.json")

    report = exploration_histogram(state)
    print(render_histogram(report))
    print()
    print(render_trajectory(state))
    best = state.top_set[0]
    print(f"\nseed avg MOS:  {state.seed_prompt.avg_mos:.3f}")
    print(f"best avg MOS:  {best.avg_mos:.3f}")
    print(f"best prompt:   {best.text[:100]}...")
    (out / "exploration-histogram.json").write_text(json.dumps(report, indent=2))
    (out / "best-prompt.txt").write_text(best.text)
    print(f"state and reports in {out}/")


if __name__ == "__main__":
    main()
