"""From a validated form to a full piece of token music.

Planning turns each part into a condition over its prompt text plus, per
part, a transition window (first ``transition_s`` seconds of every part
after the first, where the previous part's condition crossfades out) and,
for parts that reference an earlier part, a variation source: the final
``prompt_s`` seconds of the referenced part's tokens, used as an
audio-prompt whose conditioning weight decays to zero over ``decay_s``
seconds.

Where a transition and a variation overlap, the text-condition weights and
the audio-route weights compose multiplicatively and are renormalized, so
each step's condition set stays a convex combination.

Rendering is strictly in part order (variations need earlier output) and
reproducible: per-part sampler seeds are derived from the piece seed and
recorded in the manifest.
"""

from __future__ import annotations

import datetime as _dt
import json
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__ as _pkg_version
from .backends import (
    BackendInfo,
    ConditionId,
    audio_prefix_condition,
    toy_condition_from_text,
    unconditional,
)
from .forms import FormConstraints, FormSpec, serialize_form, validate_form
from .patterns import TokenGrid
from .rvq import FrameRate, RvqCodec, codec_hash, decode_grid, seconds_to_steps
from .sampling import (
    DecaySchedule,
    SamplerConfig,
    StepConditions,
    TransitionWindow,
    WeightedCondition,
    decay_weight,
    generate_segment,
    transition_weights,
    with_seed,
)
from .hashing import hash64

DEFAULT_TRANSITION_S = 5
DEFAULT_DECAY_S = 10
DEFAULT_PROMPT_S = 15


class OrchestratorError(Exception):
    pass


class InvalidSpec(OrchestratorError):
    pass


class ReferenceNotYetGenerated(OrchestratorError):
    pass


class PlanMismatch(OrchestratorError):
    pass


@dataclass(frozen=True)
class GenerationConfig:
    frame_rate: FrameRate = field(default_factory=FrameRate)
    transition_s: int = DEFAULT_TRANSITION_S
    decay_s: int = DEFAULT_DECAY_S
    prompt_s: int = DEFAULT_PROMPT_S
    constraints: FormConstraints | None = None

    def __post_init__(self):
        if self.transition_s < 0 or self.decay_s < 1 or self.prompt_s < 1:
            raise ValueError("durations must be positive (transition may be 0 to disable)")


@dataclass(frozen=True)
class VariationSource:
    referenced_part: int
    prompt_steps: int


@dataclass(frozen=True)
class PartPlan:
    index: int
    prompt: str
    condition: ConditionId
    start_step: int
    length_steps: int
    transition: TransitionWindow | None  # None for the first part or when disabled
    variation: VariationSource | None


@dataclass(frozen=True)
class GenerationPlan:
    parts: tuple[PartPlan, ...]
    frame_rate: FrameRate
    total_steps: int
    decay_steps: int
    spec: FormSpec

    def part(self, index: int) -> PartPlan:
        return self.parts[index - 1]

    def boundaries(self) -> list[int]:
        return [p.start_step for p in self.parts]


def plan_piece(spec: FormSpec, config: GenerationConfig | None = None) -> GenerationPlan:
    """Deterministic plan for a validated spec (revalidates; raises
    :class:`InvalidSpec` otherwise)."""
    cfg = config or GenerationConfig()
    report = validate_form(spec, cfg.constraints)
    if not report.valid:
        rules = ", ".join(v.rule for v in report.violations)
        raise InvalidSpec(f"form is invalid: {rules}")

    rate = cfg.frame_rate
    parts: list[PartPlan] = []
    start = 0
    for p in spec.parts:
        length_steps = seconds_to_steps(rate, p.length_s)
        transition = None
        if p.index > 1 and cfg.transition_s > 0:
            window_s = min(cfg.transition_s, p.length_s)
            transition = TransitionWindow(
                start_step=start, length_steps=seconds_to_steps(rate, window_s)
            )
        variation = None
        if p.referenced_part != -1:
            ref = spec.part(p.referenced_part)
            prompt_steps = seconds_to_steps(rate, min(cfg.prompt_s, ref.length_s))
            variation = VariationSource(
                referenced_part=p.referenced_part, prompt_steps=prompt_steps
            )
        parts.append(
            PartPlan(
                index=p.index,
                prompt=p.prompt,
                condition=toy_condition_from_text(p.prompt),
                start_step=start,
                length_steps=length_steps,
                transition=transition,
                variation=variation,
            )
        )
        start += length_steps

    return GenerationPlan(
        parts=tuple(parts),
        frame_rate=rate,
        total_steps=start,
        decay_steps=seconds_to_steps(rate, cfg.decay_s),
        spec=spec,
    )


def extract_audio_prompt(piece_so_far: TokenGrid, plan: GenerationPlan, part_index: int) -> TokenGrid:
    """The final ``prompt_steps`` steps of the span the given part's
    variation references."""
    part = plan.part(part_index)
    if part.variation is None:
        raise PlanMismatch(f"part {part_index} has no variation source")
    ref = plan.part(part.variation.referenced_part)
    ref_end = ref.start_step + ref.length_steps
    if piece_so_far.num_steps < ref_end:
        raise ReferenceNotYetGenerated(
            f"part {part.variation.referenced_part} spans to step {ref_end}; "
            f"only {piece_so_far.num_steps} generated"
        )
    return piece_so_far.slice_steps(ref_end - part.variation.prompt_steps, ref_end)


def part_schedule(
    plan: GenerationPlan, part_index: int, audio_prompt: TokenGrid | None
) -> list[StepConditions]:
    """Per-step weighted condition sets for one part.

    Text weights come from the transition window (previous vs. current
    condition), audio weights from the decay schedule; inside an overlap
    the two compose multiplicatively and renormalize.
    """
    part = plan.part(part_index)
    prev = plan.part(part_index - 1) if part_index > 1 else None
    decay = DecaySchedule(length_steps=plan.decay_steps)
    prefix_conditions: dict[str | None, ConditionId] = {}

    def prefix_route(text: str | None) -> ConditionId:
        if text not in prefix_conditions:
            prefix_conditions[text] = audio_prefix_condition(audio_prompt, text)
        return prefix_conditions[text]

    schedule: list[StepConditions] = []
    for s in range(part.length_steps):
        absolute = part.start_step + s
        text_routes: list[tuple[ConditionId, str | None, float]] = []
        if part.transition is not None and prev is not None:
            w_old, w_new = transition_weights(absolute, part.transition)
        else:
            w_old, w_new = 0.0, 1.0
        if w_old > 0.0:
            text_routes.append((prev.condition, prev.prompt, w_old))
        if w_new > 0.0:
            text_routes.append((part.condition, part.prompt, w_new))

        w_audio = decay_weight(s, decay) if audio_prompt is not None else 0.0
        weighted: list[WeightedCondition] = []
        if w_audio > 0.0:
            for cond, text, w in text_routes:
                if w * (1.0 - w_audio) > 0.0:
                    weighted.append(WeightedCondition(cond, w * (1.0 - w_audio)))
                weighted.append(WeightedCondition(prefix_route(text), w * w_audio))
            total = sum(wc.weight for wc in weighted)
            weighted = [WeightedCondition(wc.condition, wc.weight / total) for wc in weighted]
        else:
            weighted = [WeightedCondition(cond, w) for cond, _, w in text_routes]

        schedule.append(StepConditions(conditions=tuple(weighted), uncond=unconditional()))
    return schedule


def part_seed(master_seed: int, part_index: int) -> int:
    masked = master_seed & ((1 << 64) - 1)
    return hash64(b"piece-part", masked.to_bytes(8, "little"), part_index.to_bytes(4, "little"))


@dataclass
class PieceArtifact:
    grid: TokenGrid
    frames: np.ndarray
    manifest: dict


def grid_digest(grid: TokenGrid) -> str:
    h = hashlib.sha256()
    h.update(np.int64(grid.num_steps).tobytes())
    h.update(np.int64(grid.num_codebooks).tobytes())
    h.update(np.ascontiguousarray(grid.tokens, dtype="<i8").tobytes())
    return h.hexdigest()


def render_piece(
    plan: GenerationPlan,
    backend,
    codec: RvqCodec,
    sampler_config: SamplerConfig | None = None,
    checkpoint_dir: str | Path | None = None,
) -> PieceArtifact:
    """Generate every part in index order and decode the full grid.

    The manifest records the plan, every derived seed, backend info, codec
    hash, and per-part token ranges; two runs with identical inputs yield
    identical grids. With ``checkpoint_dir`` set, a backend failure leaves
    a resumable per-part segment checkpoint behind.
    """
    cfg = sampler_config or SamplerConfig()
    info: BackendInfo = backend.info()
    if codec.codebook_size != info.vocab_size or codec.num_codebooks != info.num_codebooks:
        raise PlanMismatch(
            f"codec ({codec.num_codebooks}x{codec.codebook_size}) does not match "
            f"backend ({info.num_codebooks}x{info.vocab_size})"
        )

    piece = TokenGrid.empty(info.num_codebooks)
    seeds: dict[str, int] = {}
    for part in plan.parts:
        audio_prompt = None
        if part.variation is not None:
            audio_prompt = extract_audio_prompt(piece, plan, part.index)
        schedule = part_schedule(plan, part.index, audio_prompt)
        seed = part_seed(cfg.seed, part.index)
        seeds[str(part.index)] = seed
        ckpt = None
        if checkpoint_dir is not None:
            ckpt = Path(checkpoint_dir) / f"part-{part.index}.ckpt"
        segment = generate_segment(
            backend,
            schedule,
            part.length_steps,
            piece,
            with_seed(cfg, seed),
            checkpoint_path=ckpt,
        )
        piece = TokenGrid(tokens=np.concatenate([piece.tokens, segment.tokens]))

    if piece.num_steps != plan.total_steps:
        raise PlanMismatch(f"generated {piece.num_steps} steps; plan says {plan.total_steps}")

    frames = decode_grid(codec, piece.tokens)
    manifest = {
        "format_version": 1,
        "generator": f"formgen {_pkg_version}",
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "spec": serialize_form(plan.spec),
        "total_steps": plan.total_steps,
        "steps_per_second": plan.frame_rate.steps_per_second,
        "master_seed": cfg.seed,
        "part_seeds": seeds,
        "sampler": {
            "guidance": cfg.guidance,
            "temperature": cfg.temperature,
            "top_k": cfg.top_k,
            "mode": cfg.mode,
        },
        "backend": {
            "name": info.name,
            "num_codebooks": info.num_codebooks,
            "vocab_size": info.vocab_size,
            "context_window": info.context_window,
        },
        "codec_sha256": codec_hash(codec),
        "parts": [
            {
                "index": p.index,
                "prompt": p.prompt,
                "start_step": p.start_step,
                "end_step": p.start_step + p.length_steps,
                "transition_steps": p.transition.length_steps if p.transition else 0,
                "referenced_part": p.variation.referenced_part if p.variation else -1,
                "prompt_steps": p.variation.prompt_steps if p.variation else 0,
            }
            for p in plan.parts
        ],
        "grid_sha256": grid_digest(piece),
    }
    return PieceArtifact(grid=piece, frames=frames, manifest=manifest)


def write_manifest(artifact: PieceArtifact, path: str | Path) -> None:
    Path(path).write_text(json.dumps(artifact.manifest, indent=2))


@dataclass
class RenderEngine:
    """Form-to-piece engine facade (what the prompt optimizer drives)."""

    backend: object
    codec: RvqCodec
    config: GenerationConfig = field(default_factory=GenerationConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def render_form(self, spec: FormSpec, seed: int) -> PieceArtifact:
        plan = plan_piece(spec, self.config)
        return render_piece(plan, self.backend, self.codec, with_seed(self.sampler, seed))
