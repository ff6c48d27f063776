"""Classifier-free guidance by probability-space interpolation.

Per generation step, the engine queries the backend once per distinct
condition, softmaxes each logits set into per-codebook distributions, and
takes a convex combination:

    q = (1 - g) * p_uncond + g * sum_i w_i * p_i        (weights sum to 1)

with guidance strength ``g`` in [0, 1]. One token per codebook is then
drawn from ``q``. Two weight schedules drive the blending over time:

* transition: across a window the outgoing condition's weight falls from
  one to zero linearly while the incoming condition's rises from zero to
  one (default window: 5 s of steps);
* decay: an audio-prompt condition's weight falls linearly from one to
  zero (default: 10 s of steps).

Both schedules divide by (length - 1) so their endpoints are attained
exactly at the first and last step of the window.

Sampling uses inverse-CDF draws so an oracle can replay them: per step,
codebooks are visited in ascending order, one ``rng.random()`` per
codebook, and the token is the first index whose cumulative probability
exceeds the draw.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .backends import ConditionId, ShapeMismatch, unconditional
from .hashing import hash64
from .patterns import TokenGrid


class SamplingError(Exception):
    pass


class AllMasked(SamplingError):
    pass


class WeightSumInvalid(SamplingError):
    pass


class ScheduleMismatch(SamplingError):
    pass


WEIGHT_TOL = 1e-9

DEFAULT_GUIDANCE = 0.85
DEFAULT_TEMPERATURE = 1.0
DEFAULT_TOP_K = 250

PROBABILITY_MODE = "probability"
LOGIT_MODE = "logit"


@dataclass(frozen=True)
class SamplerConfig:
    """``mode`` selects the interpolation space: ``probability`` (convex
    combination of distributions, the default) or ``logit`` (combination of
    log-probabilities, the common CFG extrapolation style)."""

    guidance: float = DEFAULT_GUIDANCE
    temperature: float = DEFAULT_TEMPERATURE
    top_k: int | None = DEFAULT_TOP_K
    seed: int = 0
    mode: str = PROBABILITY_MODE

    def __post_init__(self):
        if self.mode == PROBABILITY_MODE and not (0.0 <= self.guidance <= 1.0):
            raise ValueError("guidance must be in [0, 1] in probability mode")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class WeightedCondition:
    condition: ConditionId
    weight: float


@dataclass(frozen=True)
class StepConditions:
    """Condition set for one generation step."""

    conditions: tuple[WeightedCondition, ...]
    uncond: ConditionId = field(default_factory=unconditional)


@dataclass(frozen=True)
class TransitionWindow:
    start_step: int
    length_steps: int

    def __post_init__(self):
        if self.length_steps < 1:
            raise ValueError("transition window must span at least one step")


@dataclass(frozen=True)
class DecaySchedule:
    length_steps: int

    def __post_init__(self):
        if self.length_steps < 1:
            raise ValueError("decay schedule must span at least one step")


def softmax_with(
    logits: np.ndarray, temperature: float = 1.0, top_k: int | None = None
) -> np.ndarray:
    """Per-codebook distributions from (K, V) logits: keep the top_k
    largest entries (all, if None or >= V), scale by 1/temperature,
    exponentiate, normalize."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch("logits must have shape (K, V)")
    k, v = x.shape
    if top_k is not None and top_k < 1:
        raise AllMasked(f"top_k={top_k} masks every token")

    x = x.copy()
    if top_k is not None and top_k < v:
        # mask everything below each codebook's top_k-th logit
        kept = np.argpartition(x, v - top_k, axis=1)[:, v - top_k :]
        mask = np.ones_like(x, dtype=bool)
        np.put_along_axis(mask, kept, False, axis=1)
        x[mask] = -np.inf

    x = x / temperature
    x -= x.max(axis=1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=1, keepdims=True)


def blend(
    p_uncond: np.ndarray,
    conditionals: list[tuple[np.ndarray, float]],
    guidance: float,
) -> np.ndarray:
    """q = (1-g) * p_uncond + g * sum_i w_i * p_i, per codebook."""
    weights = [w for _, w in conditionals]
    if abs(sum(weights) - 1.0) > WEIGHT_TOL:
        raise WeightSumInvalid(f"condition weights sum to {sum(weights)!r}")
    if any(w < 0.0 for w in weights):
        raise WeightSumInvalid("condition weights must be non-negative")
    base = np.asarray(p_uncond, dtype=np.float64)
    mix = np.zeros_like(base)
    for p, w in conditionals:
        p = np.asarray(p, dtype=np.float64)
        if p.shape != base.shape:
            raise ShapeMismatch(f"distribution shape {p.shape} != {base.shape}")
        mix += w * p
    return (1.0 - guidance) * base + guidance * mix


def blend_log(
    p_uncond: np.ndarray,
    conditionals: list[tuple[np.ndarray, float]],
    guidance: float,
) -> np.ndarray:
    """Log-space variant (optional mode): combine log-probabilities with
    the same weights, then renormalize. Permits g > 1 extrapolation."""
    weights = [w for _, w in conditionals]
    if abs(sum(weights) - 1.0) > WEIGHT_TOL:
        raise WeightSumInvalid(f"condition weights sum to {sum(weights)!r}")
    tiny = np.finfo(np.float64).tiny
    acc = (1.0 - guidance) * np.log(np.asarray(p_uncond, dtype=np.float64) + tiny)
    for p, w in conditionals:
        if np.asarray(p).shape != acc.shape:
            raise ShapeMismatch("distribution shapes differ")
        acc += guidance * w * np.log(np.asarray(p, dtype=np.float64) + tiny)
    acc -= acc.max(axis=1, keepdims=True)
    e = np.exp(acc)
    return e / e.sum(axis=1, keepdims=True)


def transition_weights(step: int, window: TransitionWindow) -> tuple[float, float]:
    """(w_old, w_new) at an absolute step; before the window (1, 0), after
    it (0, 1), linear in between with both endpoints attained exactly."""
    if step < window.start_step:
        return (1.0, 0.0)
    last = window.start_step + window.length_steps - 1
    if step >= last:
        return (0.0, 1.0)
    w_old = 1.0 - (step - window.start_step) / (window.length_steps - 1)
    return (w_old, 1.0 - w_old)


def decay_weight(step_in_part: int, schedule: DecaySchedule) -> float:
    """Audio-prompt weight: 1 at the part's first step, linearly down to 0
    at step length-1 and beyond."""
    if step_in_part < 0:
        raise ValueError("step_in_part must be non-negative")
    if step_in_part >= schedule.length_steps - 1:
        return 0.0
    return 1.0 - step_in_part / (schedule.length_steps - 1)


def sample_step(q: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One inverse-CDF categorical draw per codebook, codebook 0 first."""
    q = np.asarray(q, dtype=np.float64)
    k, v = q.shape
    tokens = np.empty(k, dtype=np.int64)
    for j in range(k):
        r = rng.random()
        cum = np.cumsum(q[j])
        tokens[j] = min(int(np.searchsorted(cum, r, side="right")), v - 1)
    return tokens


class Backend(Protocol):
    num_codebooks: int
    vocab_size: int

    def next_logits(self, ctx: TokenGrid, condition: ConditionId) -> np.ndarray: ...


def schedule_hash(schedule: list[StepConditions]) -> int:
    """Stable digest of the condition structure, for checkpoint safety."""
    parts = []
    for entry in schedule:
        parts.append("|".join(f"{wc.condition.kind.value}:{wc.condition.id}:{wc.weight!r}"
                              for wc in entry.conditions))
        parts.append(f"u:{entry.uncond.id}")
    return hash64("\n".join(parts).encode("utf-8"))


@dataclass
class Checkpoint:
    """Resumable state of an interrupted segment."""

    ctx_tokens: list[list[int]]
    steps_done: int
    rng_state: dict
    schedule_digest: int

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.__dict__))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls(**json.loads(Path(path).read_text()))


def generate_segment(
    backend: Backend,
    schedule: list[StepConditions],
    length_steps: int,
    ctx0: TokenGrid,
    config: SamplerConfig,
    checkpoint_path: str | Path | None = None,
    resume_from: Checkpoint | None = None,
    on_step: Callable[[int, np.ndarray], None] | None = None,
) -> TokenGrid:
    """Autoregressive sampling of ``length_steps`` new steps after ``ctx0``.

    Per step the backend is queried once per distinct condition (plus the
    unconditional), the distributions are blended per the step's weights
    and the config's guidance, and one token per codebook is drawn.

    Audio-prefix conditions are evaluated against a segment-local context
    (the condition's prefix plus the tokens generated so far in this
    segment) while every other condition sees ``ctx0`` plus the generated
    tokens; each sampled step is appended to both contexts. The prefix
    itself is never part of the returned grid.

    If ``checkpoint_path`` is set, an exception mid-segment writes a
    resumable :class:`Checkpoint` before propagating. Pass the loaded
    checkpoint as ``resume_from`` to continue an interrupted run; the
    result is identical to an uninterrupted one.
    """
    if len(schedule) != length_steps:
        raise ScheduleMismatch(f"schedule has {len(schedule)} entries for {length_steps} steps")
    k = backend.num_codebooks
    digest = schedule_hash(schedule)

    if resume_from is not None:
        if resume_from.schedule_digest != digest:
            raise ScheduleMismatch("checkpoint belongs to a different schedule")
        ctx = np.asarray(resume_from.ctx_tokens, dtype=np.int64).reshape(-1, k)
        start = resume_from.steps_done
        rng = np.random.default_rng()
        rng.bit_generator.state = resume_from.rng_state
    else:
        ctx = ctx0.tokens
        start = 0
        rng = np.random.default_rng(config.seed)

    base_steps = ctx.shape[0] - start  # ctx0 length
    buf = np.empty((base_steps + length_steps, k), dtype=np.int64)
    buf[: ctx.shape[0]] = ctx
    blend_fn = blend_log if config.mode == LOGIT_MODE else blend

    step = start
    rng_state_at_step = rng.bit_generator.state
    try:
        for step in range(start, length_steps):
            rng_state_at_step = rng.bit_generator.state
            main_ctx = TokenGrid(tokens=buf[: base_steps + step])
            segment_ctx = TokenGrid(tokens=buf[base_steps : base_steps + step])
            entry = schedule[step]

            cache: dict[tuple[str, int], np.ndarray] = {}

            def dist_for(cond: ConditionId) -> np.ndarray:
                if cond.key not in cache:
                    ctx_for = segment_ctx if cond.prefix is not None else main_ctx
                    logits = backend.next_logits(ctx_for, cond)
                    cache[cond.key] = softmax_with(logits, config.temperature, config.top_k)
                return cache[cond.key]

            if entry.conditions:
                total = sum(wc.weight for wc in entry.conditions)
                if abs(total - 1.0) > WEIGHT_TOL:
                    raise WeightSumInvalid(f"step {step} weights sum to {total!r}")

            p_uncond = dist_for(entry.uncond)
            conds = [
                (dist_for(wc.condition), wc.weight)
                for wc in entry.conditions
                if wc.weight != 0.0
            ]
            # an empty condition set means a purely unconditional step
            q = blend_fn(p_uncond, conds, config.guidance) if conds else p_uncond
            tokens = sample_step(q, rng)
            buf[base_steps + step] = tokens
            if on_step is not None:
                on_step(step, tokens)
    except Exception:
        if checkpoint_path is not None:
            # roll back to the boundary of the step that failed
            Checkpoint(
                ctx_tokens=buf[: base_steps + step].tolist(),
                steps_done=step,
                rng_state=rng_state_at_step,
                schedule_digest=digest,
            ).save(checkpoint_path)
        raise

    return TokenGrid(tokens=buf[base_steps:])


def constant_schedule(
    condition: ConditionId, length_steps: int, uncond: ConditionId | None = None
) -> list[StepConditions]:
    """Single text condition at weight 1 for every step."""
    entry = StepConditions(
        conditions=(WeightedCondition(condition, 1.0),),
        uncond=uncond or unconditional(),
    )
    return [entry] * length_steps


def with_seed(config: SamplerConfig, seed: int) -> SamplerConfig:
    return replace(config, seed=seed)
