"""Engine configuration: one JSON document, env-var overrides for
credentials only.

All of the pipeline's tunable constants live here with their standard
defaults: 75 latent steps per second, 5 s transitions, 10 s audio-prompt
decay, 15 s audio prompts, the 20/10/5/5/20 optimizer counts, and the
codec preset (``toy`` d=8 V=64 for desk scale, ``full`` d=128 V=1024).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .forms import FormConstraints
from .optimizer import OptimizerConfig
from .rvq import FULL_PRESET, TOY_PRESET, FrameRate, RvqCodec, random_codec
from .sampling import SamplerConfig
from .orchestrator import GenerationConfig

CODEC_PRESETS = {"toy": TOY_PRESET, "full": FULL_PRESET}

LLM_API_KEY_ENV = "FORMGEN_LLM_API_KEY"


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Config:
    steps_per_second: int = 75
    codec_preset: str = "toy"
    codec_seed: int = 7
    guidance: float = 0.85
    temperature: float = 1.0
    top_k: int = 250
    transition_s: int = 5
    decay_s: int = 10
    prompt_s: int = 15
    total_s: int = 150
    min_part_s: int = 20
    max_part_s: int = 30
    n_explore: int = 20
    pieces_per_prompt: int = 10
    raters_per_piece: int = 5
    optimizer_top_k: int = 5
    max_iterations: int = 20
    backend_url: str | None = None
    llm_url: str | None = None
    llm_model: str = "gpt-4"
    store_path: str = "rating-store"
    clips_path: str = "clips"

    def __post_init__(self):
        for name in ("steps_per_second", "transition_s", "decay_s", "prompt_s", "total_s"):
            if getattr(self, name) < 0 or (name != "transition_s" and getattr(self, name) < 1):
                raise ConfigError(f"{name} must be positive")
        if self.codec_preset not in CODEC_PRESETS:
            raise ConfigError(f"unknown codec preset {self.codec_preset!r}")

    @property
    def frame_rate(self) -> FrameRate:
        return FrameRate(steps_per_second=self.steps_per_second)

    def sampler_config(self, seed: int = 0) -> SamplerConfig:
        return SamplerConfig(
            guidance=self.guidance, temperature=self.temperature, top_k=self.top_k, seed=seed
        )

    def generation_config(self) -> GenerationConfig:
        return GenerationConfig(
            frame_rate=self.frame_rate,
            transition_s=self.transition_s,
            decay_s=self.decay_s,
            prompt_s=self.prompt_s,
            constraints=self.form_constraints(),
        )

    def form_constraints(self) -> FormConstraints:
        return FormConstraints(
            total_s=self.total_s, min_part_s=self.min_part_s, max_part_s=self.max_part_s
        )

    def optimizer_config(self, seed: int = 0) -> OptimizerConfig:
        return OptimizerConfig(
            n_explore=self.n_explore,
            pieces_per_prompt=self.pieces_per_prompt,
            raters_per_piece=self.raters_per_piece,
            top_k=self.optimizer_top_k,
            max_iterations=self.max_iterations,
            seed=seed,
        )

    def make_codec(self) -> RvqCodec:
        preset = CODEC_PRESETS[self.codec_preset]
        return random_codec(
            d=preset["d"],
            num_codebooks=preset["num_codebooks"],
            codebook_size=preset["codebook_size"],
            seed=self.codec_seed,
        )

    def llm_api_key(self) -> str | None:
        return os.environ.get(LLM_API_KEY_ENV)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        body = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    known = {f.name for f in dataclasses.fields(Config)}
    unknown = set(body) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return Config(**body)
