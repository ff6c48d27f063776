"""Two-phase black-box optimization of the music-prompt instruction.

Two LLM roles cooperate: the MP-LLM turns an instruction prompt into form
documents for the engine, and the PO-LLM proposes new instruction prompts.
The score of an instruction prompt is the average MOS over
``pieces_per_prompt`` generated pieces, each rated by
``raters_per_piece`` raters.

Phase 1 (exploration): from the seed instruction the PO-LLM writes
``n_explore`` diverse candidates; every one is evaluated and the best five
(seed included) form the top set. Phase 2 (exploitation): per iteration
the PO-LLM sees the top five prompt/score pairs as JSON and proposes one
new prompt, which enters the set only if it scores strictly higher than
the current minimum; the set is re-sorted and truncated to five. After
``max_iterations`` iterations the run stops. Both the minimum and the
maximum of the top set are non-decreasing by construction.

State is checkpointed after every evaluation; resuming a checkpoint with
the same scripted clients and simulated raters replays to the identical
final state.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .forms import FormError, FormSpec, parse_form, validate_form
from .hashing import hash64
from .textjson import extract_json_array

PHASE_EXPLORATION = "exploration"
PHASE_EXPLOITATION = "exploitation"
PHASE_DONE = "done"

ORIGIN_SEED = "seed"
ORIGIN_EXPLORATION = "exploration"
ORIGIN_EXPLOITATION = "exploitation"

STATE_FORMAT_VERSION = 1


class OptimizerError(Exception):
    pass


class MalformedResponse(OptimizerError):
    def __init__(self, message: str, count: int | None = None):
        super().__init__(message)
        self.count = count


class LlmUnavailable(OptimizerError):
    pass


class RetryBudgetExhausted(OptimizerError):
    pass


class PhaseError(OptimizerError):
    pass


# --- LLM clients -----------------------------------------------------------


class LlmClient(Protocol):
    def complete(self, prompt: str) -> str: ...


@dataclass
class ScriptedLlmClient:
    """Replays canned responses by call index; deterministic by design.

    Fixture file format: JSON, either a plain list of response strings or
    {"responses": [...], "cycle": bool}.
    """

    responses: list[str]
    cycle: bool = False
    calls: int = 0
    transcript: list[str] = field(default_factory=list)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedLlmClient":
        data = json.loads(Path(path).read_text())
        if isinstance(data, list):
            return cls(responses=data)
        return cls(responses=data["responses"], cycle=bool(data.get("cycle", False)))

    def complete(self, prompt: str) -> str:
        idx = self.calls
        if self.cycle:
            idx %= len(self.responses)
        elif idx >= len(self.responses):
            raise LlmUnavailable(f"scripted fixture exhausted after {self.calls} calls")
        self.calls += 1
        self.transcript.append(prompt)
        return self.responses[idx]


@dataclass
class HttpLlmClient:
    """Minimal chat-completions client; one user message in, text out."""

    base_url: str
    model: str = "gpt-4"
    api_key: str | None = None
    timeout_s: float = 60.0
    calls: int = 0

    def complete(self, prompt: str) -> str:
        import httpx

        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = httpx.post(
                f"{self.base_url.rstrip('/')}/v1/chat/completions",
                json={"model": self.model, "messages": [{"role": "user", "content": prompt}]},
                headers=headers,
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise LlmUnavailable(str(exc)) from exc
        self.calls += 1
        return resp.json()["choices"][0]["message"]["content"]


# --- meta prompts ----------------------------------------------------------

EXPLORATION_META_TEMPLATE = (
    "Assume you are a music composer who is creative and composes in several "
    "genres. You want to use a large language model (LLM) to come up with a "
    "new composition. The LLM writes a high-level description of each part in "
    "the piece. You write a set of prompts for the LLM. A sample prompt is "
    "provided to you. You should use this sample to get inspired, do not limit "
    "yourself to this, and do your best to be creative to come up with novel "
    "and diverse set of instructions. Write {n} separate prompts for the LLM "
    "in the JSON format ['_prompt_1','_prompt_2_',..]. Keep the prompts "
    "concise. The sample prompt is:\n"
)

EXPLOITATION_META_TEMPLATE = (
    "Assume you are a music composer who is creative and composes in several "
    "genres. You want to use a large language model (LLM) to come up with a "
    "new composition. The LLM writes a high-level description of each part in "
    "the piece. You are given {n} such prompts with their corresponding "
    "scores. You should think of a new prompt that is going to have a higher "
    "score than the {n} samples. The samples and their scores are provided "
    "in the JSON format:\n"
)


def build_exploration_prompt(seed_prompt: str, n: int = 20) -> str:
    return EXPLORATION_META_TEMPLATE.format(n=n) + seed_prompt


def build_exploitation_prompt(scored: list[tuple[str, float]]) -> str:
    """Top prompts and their scores, serialized as JSON (structured lists
    keep large meta prompts readable for the LLM)."""
    if not scored:
        raise PhaseError("exploitation requires at least one scored prompt")
    pairs = [{"prompt": p, "score": round(s, 2)} for p, s in scored]
    return EXPLOITATION_META_TEMPLATE.format(n=len(scored)) + json.dumps(pairs, indent=2)


def build_meta_prompt(phase: str, data, n_explore: int = 20) -> str:
    if phase == PHASE_EXPLORATION:
        return build_exploration_prompt(data, n_explore)
    if phase == PHASE_EXPLOITATION:
        return build_exploitation_prompt(data)
    raise PhaseError(f"no meta prompt for phase {phase!r}")


def parse_llm_prompt_list(response: str, expected_n: int | None = None) -> list[str]:
    """First JSON array of strings in the response (fences and prose
    tolerated); a count mismatch is a :class:`MalformedResponse` carrying
    the actual count."""
    arr = extract_json_array(response)
    if arr is None or not all(isinstance(x, str) for x in arr):
        raise MalformedResponse("no JSON array of strings in response")
    if expected_n is not None and len(arr) != expected_n:
        raise MalformedResponse(
            f"expected {expected_n} prompts, got {len(arr)}", count=len(arr)
        )
    return list(arr)


def parse_proposal(response: str) -> str:
    """Exploitation responses carry one new prompt: either a JSON array
    (first element) or plain text."""
    try:
        return parse_llm_prompt_list(response)[0]
    except MalformedResponse:
        text = response.strip().strip("`").strip()
        if not text:
            raise MalformedResponse("empty proposal")
        return text


# --- simulated rater -------------------------------------------------------

KEYWORD_WEIGHTS = {
    "form": 0.6,
    "part": 0.4,
    "bpm": 0.5,
    "instrument": 0.5,
    "tempo": 0.3,
    "seconds": 0.4,
    "contrast": 0.4,
    "transition": 0.3,
    "texture": 0.3,
    "genre": 0.2,
    "verbose": 0.2,
    "precise": 0.2,
    "reference": 0.3,
}


def feature_score(prompt_text: str) -> float:
    """Documented ground truth the simulated rater responds to: rewarded
    keywords minus a short-prompt penalty, roughly in [-2, 4]."""
    lower = prompt_text.lower()
    score = sum(w for kw, w in KEYWORD_WEIGHTS.items() if kw in lower)
    words = len(prompt_text.split())
    if words < 30:
        score -= 1.5
    elif words < 60:
        score -= 0.5
    return score - 1.0


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


@dataclass(frozen=True)
class SimulatedRater:
    """clamp(1 + 4*sigmoid(feature_score(prompt)) + eps, 1, 5) with noise
    eps ~ N(0, noise_sd) seeded per (prompt, piece, rater)."""

    seed: int = 0
    noise_sd: float = 0.15

    def rate(self, prompt_text: str, piece, piece_index: int, rater_index: int) -> float:
        base = 1.0 + 4.0 * _sigmoid(feature_score(prompt_text))
        noise_seed = hash64(
            b"sim-rater",
            (self.seed & ((1 << 64) - 1)).to_bytes(8, "little"),
            prompt_text.encode("utf-8"),
            piece_index.to_bytes(4, "little"),
            rater_index.to_bytes(4, "little"),
        )
        eps = np.random.default_rng(noise_seed).normal(0.0, self.noise_sd)
        return float(min(5.0, max(1.0, base + eps)))


class RaterSource(Protocol):
    def rate(self, prompt_text: str, piece, piece_index: int, rater_index: int) -> float: ...


class Engine(Protocol):
    def render_form(self, spec: FormSpec, seed: int): ...


# --- optimizer state -------------------------------------------------------


@dataclass(frozen=True)
class CandidatePrompt:
    text: str
    origin: str
    avg_mos: float | None = None
    num_ratings: int = 0

    def __post_init__(self):
        if self.avg_mos is not None and self.num_ratings <= 0:
            raise ValueError("a scored candidate must have ratings")


@dataclass(frozen=True)
class OptimizerConfig:
    n_explore: int = 20
    pieces_per_prompt: int = 10
    raters_per_piece: int = 5
    top_k: int = 5
    max_iterations: int = 20
    form_retries: int = 3
    floor_score: float = 1.0
    seed: int = 0


@dataclass
class TrajectoryPoint:
    iteration: int
    top_min: float
    top_max: float
    top_mean: float
    accepted: bool


@dataclass
class OptimizerState:
    seed_prompt: CandidatePrompt
    config: OptimizerConfig
    phase: str = PHASE_EXPLORATION
    pool: list[CandidatePrompt] = field(default_factory=list)
    top_set: list[CandidatePrompt] = field(default_factory=list)
    pending: list[str] = field(default_factory=list)
    iteration: int = 0
    po_calls: int = 0
    mp_calls: int = 0
    trajectory: list[TrajectoryPoint] = field(default_factory=list)

    def top_scores(self) -> list[float]:
        return [c.avg_mos for c in self.top_set]


def save_state(state: OptimizerState, path: str | Path) -> None:
    body = {
        "format_version": STATE_FORMAT_VERSION,
        "seed_prompt": asdict(state.seed_prompt),
        "config": asdict(state.config),
        "phase": state.phase,
        "pool": [asdict(c) for c in state.pool],
        "top_set": [asdict(c) for c in state.top_set],
        "pending": state.pending,
        "iteration": state.iteration,
        "po_calls": state.po_calls,
        "mp_calls": state.mp_calls,
        "trajectory": [asdict(t) for t in state.trajectory],
    }
    Path(path).write_text(json.dumps(body, indent=2))


def load_state(path: str | Path) -> OptimizerState:
    body = json.loads(Path(path).read_text())
    if body.get("format_version") != STATE_FORMAT_VERSION:
        raise ValueError("unsupported optimizer state version")
    return OptimizerState(
        seed_prompt=CandidatePrompt(**body["seed_prompt"]),
        config=OptimizerConfig(**body["config"]),
        phase=body["phase"],
        pool=[CandidatePrompt(**c) for c in body["pool"]],
        top_set=[CandidatePrompt(**c) for c in body["top_set"]],
        pending=list(body["pending"]),
        iteration=body["iteration"],
        po_calls=body["po_calls"],
        mp_calls=body["mp_calls"],
        trajectory=[TrajectoryPoint(**t) for t in body["trajectory"]],
    )


def _sync_scripted(client, calls: int) -> None:
    """Fast-forward a scripted client to a checkpointed call count."""
    if isinstance(client, ScriptedLlmClient):
        client.calls = calls


# --- evaluation ------------------------------------------------------------


def request_form(mp_llm: LlmClient, instruction_prompt: str, retries: int) -> FormSpec:
    """Ask the MP-LLM for a form document, retrying invalid responses up to
    ``retries`` extra attempts before raising
    :class:`RetryBudgetExhausted`."""
    last = "no attempts made"
    for _ in range(retries + 1):
        response = mp_llm.complete(instruction_prompt)
        try:
            spec = parse_form(response)
        except FormError as exc:
            last = f"parse failed: {exc}"
            continue
        report = validate_form(spec)
        if report.valid:
            return spec
        last = "; ".join(v.message for v in report.violations)
    raise RetryBudgetExhausted(f"MP-LLM produced no valid form: {last}")


def evaluate_candidate(
    prompt_text: str,
    mp_llm: LlmClient,
    engine: Engine,
    rater_source: RaterSource,
    config: OptimizerConfig,
) -> tuple[float, int]:
    """Average MOS over pieces_per_prompt pieces x raters_per_piece raters.

    Returns (avg_mos, num_ratings). Invalid MP-LLM forms are retried per
    piece; a piece whose retry budget runs out raises
    :class:`RetryBudgetExhausted` (phase drivers translate that into the
    floor score).
    """
    if not prompt_text:
        raise ValueError("candidate prompt is empty")
    scores: list[float] = []
    for piece_index in range(config.pieces_per_prompt):
        spec = request_form(mp_llm, prompt_text, config.form_retries)
        piece_seed = hash64(
            b"opt-piece",
            (config.seed & ((1 << 64) - 1)).to_bytes(8, "little"),
            prompt_text.encode("utf-8"),
            piece_index.to_bytes(4, "little"),
        )
        piece = engine.render_form(spec, piece_seed)
        for rater_index in range(config.raters_per_piece):
            scores.append(rater_source.rate(prompt_text, piece, piece_index, rater_index))
    return (sum(scores) / len(scores), len(scores))


def _evaluate_or_floor(
    prompt_text: str, origin: str, mp_llm, engine, rater_source, config: OptimizerConfig
) -> CandidatePrompt:
    try:
        avg, n = evaluate_candidate(prompt_text, mp_llm, engine, rater_source, config)
    except RetryBudgetExhausted:
        # a candidate that cannot produce valid forms scores the floor
        # instead of aborting the phase
        avg, n = config.floor_score, 1
    return CandidatePrompt(text=prompt_text, origin=origin, avg_mos=avg, num_ratings=n)


# --- phases ----------------------------------------------------------------


def run_exploration(
    state: OptimizerState,
    po_llm: LlmClient,
    mp_llm: LlmClient,
    engine: Engine,
    rater_source: RaterSource,
    checkpoint_path: str | Path | None = None,
) -> OptimizerState:
    """Generate and score the exploration candidates, then seed the top
    set and advance to exploitation."""
    if state.phase != PHASE_EXPLORATION:
        raise PhaseError(f"cannot explore in phase {state.phase}")
    _sync_scripted(po_llm, state.po_calls)
    _sync_scripted(mp_llm, state.mp_calls)

    def checkpoint():
        if checkpoint_path is not None:
            save_state(state, checkpoint_path)

    if state.seed_prompt.avg_mos is None:
        state.seed_prompt = _evaluate_or_floor(
            state.seed_prompt.text, ORIGIN_SEED, mp_llm, engine, rater_source, state.config
        )
        state.mp_calls = getattr(mp_llm, "calls", state.mp_calls)
        checkpoint()

    if not state.pending and len(state.pool) < state.config.n_explore:
        meta = build_exploration_prompt(state.seed_prompt.text, state.config.n_explore)
        response = po_llm.complete(meta)
        state.po_calls = getattr(po_llm, "calls", state.po_calls)
        state.pending = parse_llm_prompt_list(response, expected_n=state.config.n_explore)
        checkpoint()

    while state.pending:
        text = state.pending[0]
        candidate = _evaluate_or_floor(
            text, ORIGIN_EXPLORATION, mp_llm, engine, rater_source, state.config
        )
        state.pending.pop(0)
        state.pool.append(candidate)
        state.mp_calls = getattr(mp_llm, "calls", state.mp_calls)
        checkpoint()

    contenders = [state.seed_prompt, *state.pool]
    contenders.sort(key=lambda c: c.avg_mos, reverse=True)
    state.top_set = contenders[: state.config.top_k]
    state.phase = PHASE_EXPLOITATION
    checkpoint()
    return state


def run_exploitation_step(
    state: OptimizerState,
    po_llm: LlmClient,
    mp_llm: LlmClient,
    engine: Engine,
    rater_source: RaterSource,
    checkpoint_path: str | Path | None = None,
) -> OptimizerState:
    """One propose/evaluate/accept iteration against the top set."""
    if state.phase != PHASE_EXPLOITATION:
        raise PhaseError(f"cannot exploit in phase {state.phase}")
    if state.iteration >= state.config.max_iterations:
        state.phase = PHASE_DONE
        return state
    _sync_scripted(po_llm, state.po_calls)
    _sync_scripted(mp_llm, state.mp_calls)

    if state.pending:
        text = state.pending[0]
    else:
        meta = build_exploitation_prompt([(c.text, c.avg_mos) for c in state.top_set])
        response = po_llm.complete(meta)
        state.po_calls = getattr(po_llm, "calls", state.po_calls)
        text = parse_proposal(response)
        state.pending = [text]
        if checkpoint_path is not None:
            save_state(state, checkpoint_path)

    candidate = _evaluate_or_floor(
        text, ORIGIN_EXPLOITATION, mp_llm, engine, rater_source, state.config
    )
    state.pending = []
    state.pool.append(candidate)
    state.mp_calls = getattr(mp_llm, "calls", state.mp_calls)

    current_min = min(c.avg_mos for c in state.top_set)
    accepted = candidate.avg_mos > current_min  # ties are rejected
    if accepted:
        state.top_set.append(candidate)
        state.top_set.sort(key=lambda c: c.avg_mos, reverse=True)
        state.top_set = state.top_set[: state.config.top_k]

    state.iteration += 1
    scores = state.top_scores()
    state.trajectory.append(
        TrajectoryPoint(
            iteration=state.iteration,
            top_min=min(scores),
            top_max=max(scores),
            top_mean=sum(scores) / len(scores),
            accepted=accepted,
        )
    )
    if state.iteration >= state.config.max_iterations:
        state.phase = PHASE_DONE
    if checkpoint_path is not None:
        save_state(state, checkpoint_path)
    return state


def run_optimization(
    state: OptimizerState,
    po_llm: LlmClient,
    mp_llm: LlmClient,
    engine: Engine,
    rater_source: RaterSource,
    checkpoint_path: str | Path | None = None,
) -> OptimizerState:
    """Drive whatever remains: exploration, then exploitation to the stop
    rule."""
    if state.phase == PHASE_EXPLORATION:
        state = run_exploration(state, po_llm, mp_llm, engine, rater_source, checkpoint_path)
    while state.phase == PHASE_EXPLOITATION:
        state = run_exploitation_step(
            state, po_llm, mp_llm, engine, rater_source, checkpoint_path
        )
    return state


# --- reports ---------------------------------------------------------------


def exploration_histogram(state: OptimizerState, bins: int = 8) -> dict:
    """Score distribution of the exploration pool vs. the seed score."""
    scores = [c.avg_mos for c in state.pool if c.origin == ORIGIN_EXPLORATION]
    counts, edges = np.histogram(scores, bins=bins, range=(1.0, 5.0))
    return {
        "seed_score": state.seed_prompt.avg_mos,
        "num_candidates": len(scores),
        "bin_edges": [round(float(e), 4) for e in edges],
        "counts": [int(c) for c in counts],
        "scores": [round(float(s), 4) for s in scores],
    }


def render_histogram(report: dict, width: int = 40) -> str:
    lines = [f"exploration scores (n={report['num_candidates']}, "
             f"seed={report['seed_score']:.2f})"]
    peak = max(report["counts"]) or 1
    for lo, hi, count in zip(report["bin_edges"], report["bin_edges"][1:], report["counts"]):
        bar = "#" * int(round(width * count / peak))
        lines.append(f"  {lo:4.2f}-{hi:4.2f}  {count:3d} {bar}")
    return "\n".join(lines)


def render_trajectory(state: OptimizerState) -> str:
    lines = ["iter  top-min  top-mean  top-max  accepted"]
    for t in state.trajectory:
        lines.append(
            f"{t.iteration:4d}  {t.top_min:7.3f}  {t.top_mean:8.3f}  "
            f"{t.top_max:7.3f}  {'yes' if t.accepted else 'no'}"
        )
    return "\n".join(lines)
