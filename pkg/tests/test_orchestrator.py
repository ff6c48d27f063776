import json

import numpy as np
import pytest

from formgen.backends import ConditionKind, ToyBackend
from formgen.forms import FormConstraints, FormSpec, PartSpec
from formgen.orchestrator import (
    GenerationConfig,
    InvalidSpec,
    PlanMismatch,
    ReferenceNotYetGenerated,
    RenderEngine,
    extract_audio_prompt,
    grid_digest,
    part_schedule,
    plan_piece,
    render_piece,
    write_manifest,
)
from formgen.patterns import TokenGrid
from formgen.rvq import FrameRate, random_codec
from formgen.sampling import SamplerConfig, transition_weights

FAST = GenerationConfig(frame_rate=FrameRate(5))  # 5 steps/s keeps tests quick

SINGLE_PART_CONSTRAINTS = FormConstraints(total_s=20, min_part_s=20, max_part_s=30, min_parts=1)


def small_engine_parts(lengths, refs=None):
    refs = refs or [-1] * len(lengths)
    return FormSpec(
        parts=tuple(
            PartSpec(index=i + 1, prompt=f"part {i + 1} prompt", length_s=s, referenced_part=r)
            for i, (s, r) in enumerate(zip(lengths, refs))
        ),
        total_s=sum(lengths),
    )


class TestPlan:
    def test_sample_piece_at_75(self, sample_spec):
        plan = plan_piece(sample_spec, GenerationConfig(frame_rate=FrameRate(75)))
        assert plan.total_steps == 11_250
        assert plan.boundaries() == [0, 1875, 3750, 5250, 7500, 9375]
        variations = {p.index: p.variation for p in plan.parts if p.variation}
        assert set(variations) == {4, 5, 6}
        assert variations[4].referenced_part == 2
        assert variations[5].referenced_part == 1
        assert variations[6].referenced_part == 3
        assert all(v.prompt_steps == 1125 for v in variations.values())

    def test_single_part_no_transitions_no_variations(self):
        spec = small_engine_parts([20])
        plan = plan_piece(
            spec,
            GenerationConfig(frame_rate=FrameRate(5), constraints=SINGLE_PART_CONSTRAINTS),
        )
        assert plan.parts[0].transition is None
        assert plan.parts[0].variation is None
        assert plan.total_steps == 100

    def test_prompt_clamped_by_reference_length(self):
        # a part referencing a 25 s part: prompt 15 s; referencing a 10 s part: all of it
        spec = FormSpec(
            parts=(
                PartSpec(1, "a", 25),
                PartSpec(2, "b", 20, referenced_part=1),
            ),
            total_s=45,
        )
        constraints = FormConstraints(total_s=45)
        plan = plan_piece(
            spec, GenerationConfig(frame_rate=FrameRate(75), constraints=constraints)
        )
        assert plan.parts[1].variation.prompt_steps == 1125  # min(15, 25) s

        spec_short_ref = FormSpec(
            parts=(PartSpec(1, "a", 10), PartSpec(2, "b", 20, referenced_part=1)),
            total_s=30,
        )
        constraints = FormConstraints(total_s=30, min_part_s=10)
        plan = plan_piece(
            spec_short_ref, GenerationConfig(frame_rate=FrameRate(75), constraints=constraints)
        )
        assert plan.parts[1].variation.prompt_steps == 750  # min(15, 10) s

    def test_invalid_spec_rejected(self):
        spec = small_engine_parts([25, 25])  # 50 s != 150 s default total
        spec = FormSpec(parts=spec.parts, total_s=150)
        with pytest.raises(InvalidSpec):
            plan_piece(spec, GenerationConfig(frame_rate=FrameRate(5)))

    def test_transition_windows_cover_first_five_seconds(self, sample_spec):
        plan = plan_piece(sample_spec, GenerationConfig(frame_rate=FrameRate(75)))
        for part in plan.parts[1:]:
            assert part.transition.start_step == part.start_step
            assert part.transition.length_steps == 375

    def test_transitions_disabled(self, sample_spec):
        cfg = GenerationConfig(frame_rate=FrameRate(5), transition_s=0)
        plan = plan_piece(sample_spec, cfg)
        assert all(p.transition is None for p in plan.parts)

    def test_deterministic(self, sample_spec):
        a = plan_piece(sample_spec, FAST)
        b = plan_piece(sample_spec, FAST)
        assert a == b


class TestExtractAudioPrompt:
    def test_last_fifteen_seconds(self, sample_spec, rng):
        plan = plan_piece(sample_spec, GenerationConfig(frame_rate=FrameRate(75)))
        piece = TokenGrid(tokens=rng.integers(0, 64, size=(plan.total_steps, 4)))
        prompt = extract_audio_prompt(piece, plan, 4)  # references part 2
        ref = plan.part(2)
        expected = piece.tokens[ref.start_step + ref.length_steps - 1125 :
                                ref.start_step + ref.length_steps]
        assert np.array_equal(prompt.tokens, expected)
        assert prompt.num_steps == 1125

    def test_not_yet_generated(self, sample_spec, rng):
        plan = plan_piece(sample_spec, GenerationConfig(frame_rate=FrameRate(75)))
        piece = TokenGrid(tokens=rng.integers(0, 64, size=(100, 4)))
        with pytest.raises(ReferenceNotYetGenerated):
            extract_audio_prompt(piece, plan, 4)

    def test_whole_reference_when_shorter(self, rng):
        spec = FormSpec(
            parts=(PartSpec(1, "a", 10), PartSpec(2, "b", 20, referenced_part=1)),
            total_s=30,
        )
        constraints = FormConstraints(total_s=30, min_part_s=10)
        plan = plan_piece(
            spec, GenerationConfig(frame_rate=FrameRate(75), constraints=constraints)
        )
        piece = TokenGrid(tokens=rng.integers(0, 64, size=(750, 4)))
        prompt = extract_audio_prompt(piece, plan, 2)
        assert np.array_equal(prompt.tokens, piece.tokens)  # the entire span


class TestPartSchedule:
    def test_weights_match_transition_weights_exactly(self, sample_spec):
        plan = plan_piece(sample_spec, FAST)
        schedule = part_schedule(plan, 2, audio_prompt=None)
        part = plan.part(2)
        window = part.transition
        for s, entry in enumerate(schedule):
            w_old, w_new = transition_weights(part.start_step + s, window)
            got = {wc.condition.id: wc.weight for wc in entry.conditions}
            prev_cond = plan.part(1).condition
            if w_old > 0:
                assert got[prev_cond.id] == w_old
            if w_new > 0:
                assert got[part.condition.id] == w_new
            assert abs(sum(got.values()) - 1.0) < 1e-12

    def test_variation_routes_combine_multiplicatively(self, sample_spec, rng):
        plan = plan_piece(sample_spec, FAST)
        prompt = TokenGrid(tokens=rng.integers(0, 64, size=(75, 4)))
        schedule = part_schedule(plan, 4, audio_prompt=prompt)
        part = plan.part(4)
        window = part.transition
        decay_steps = plan.decay_steps
        entry = schedule[2]  # inside both the transition and the decay
        w_old, w_new = transition_weights(part.start_step + 2, window)
        w_audio = 1.0 - 2.0 / (decay_steps - 1)
        by_kind = {}
        for wc in entry.conditions:
            by_kind.setdefault(wc.condition.kind, 0.0)
            by_kind[wc.condition.kind] += wc.weight
        assert abs(sum(by_kind.values()) - 1.0) < 1e-9
        assert abs(by_kind[ConditionKind.AUDIO_PREFIX] - w_audio) < 1e-9
        assert abs(by_kind[ConditionKind.TEXT] - (1.0 - w_audio)) < 1e-9

    def test_after_decay_only_text_routes(self, sample_spec, rng):
        plan = plan_piece(sample_spec, FAST)
        prompt = TokenGrid(tokens=rng.integers(0, 64, size=(75, 4)))
        schedule = part_schedule(plan, 4, audio_prompt=prompt)
        tail = schedule[plan.decay_steps :]
        for entry in tail:
            kinds = {wc.condition.kind for wc in entry.conditions}
            assert kinds == {ConditionKind.TEXT}


@pytest.fixture
def fast_setup(sample_spec):
    backend = ToyBackend(num_codebooks=4, vocab_size=64, context_window=4)
    codec = random_codec(d=8, num_codebooks=4, codebook_size=64, seed=7)
    plan = plan_piece(sample_spec, FAST)
    return plan, backend, codec


class TestRenderPiece:
    def test_structure_and_reproducibility(self, fast_setup):
        plan, backend, codec = fast_setup
        config = SamplerConfig(seed=17)
        a = render_piece(plan, backend, codec, config)
        assert a.grid.num_steps == plan.total_steps == 750
        assert a.frames.shape == (750, 8)
        b = render_piece(plan, backend, codec, config)
        assert a.manifest["grid_sha256"] == b.manifest["grid_sha256"]
        assert np.array_equal(a.grid.tokens, b.grid.tokens)

    def test_manifest_contents(self, fast_setup, tmp_path):
        plan, backend, codec = fast_setup
        artifact = render_piece(plan, backend, codec, SamplerConfig(seed=17))
        m = artifact.manifest
        assert [p["start_step"] for p in m["parts"]] == [0, 125, 250, 350, 500, 625]
        assert [p["referenced_part"] for p in m["parts"]] == [-1, -1, -1, 2, 1, 3]
        assert m["total_steps"] == 750
        assert set(m["part_seeds"]) == {"1", "2", "3", "4", "5", "6"}
        assert m["backend"]["name"] == "toy"
        assert len(m["codec_sha256"]) == 64
        path = tmp_path / "manifest.json"
        write_manifest(artifact, path)
        assert json.loads(path.read_text())["grid_sha256"] == m["grid_sha256"]

    def test_prompt_tokens_not_emitted(self, fast_setup):
        # the variation prefix conditions must not stretch the output
        plan, backend, codec = fast_setup
        artifact = render_piece(plan, backend, codec, SamplerConfig(seed=4))
        assert artifact.grid.num_steps == plan.total_steps

    def test_transitions_change_only_later_steps(self, sample_spec):
        backend = ToyBackend(num_codebooks=4, vocab_size=64, context_window=4)
        codec = random_codec(d=8, num_codebooks=4, codebook_size=64, seed=7)
        with_tr = plan_piece(sample_spec, GenerationConfig(frame_rate=FrameRate(5)))
        without_tr = plan_piece(
            sample_spec, GenerationConfig(frame_rate=FrameRate(5), transition_s=0)
        )
        config = SamplerConfig(seed=6)
        a = render_piece(with_tr, backend, codec, config)
        b = render_piece(without_tr, backend, codec, config)
        diff = np.nonzero(np.any(a.grid.tokens != b.grid.tokens, axis=1))[0]
        assert diff.size > 0
        # part 1 has no transition: identical until the first window starts
        assert diff[0] >= with_tr.part(2).start_step

    def test_single_part_render(self):
        spec = small_engine_parts([20])
        cfg = GenerationConfig(frame_rate=FrameRate(5), constraints=SINGLE_PART_CONSTRAINTS)
        plan = plan_piece(spec, cfg)
        backend = ToyBackend(num_codebooks=4, vocab_size=64, context_window=4)
        codec = random_codec(d=8, num_codebooks=4, codebook_size=64, seed=7)
        artifact = render_piece(plan, backend, codec, SamplerConfig(seed=1))
        assert artifact.grid.num_steps == 100

    def test_codec_backend_mismatch(self, fast_setup):
        plan, backend, _ = fast_setup
        wrong = random_codec(d=8, num_codebooks=4, codebook_size=32, seed=1)
        with pytest.raises(PlanMismatch):
            render_piece(plan, backend, wrong, SamplerConfig())

    def test_different_seeds_differ(self, fast_setup):
        plan, backend, codec = fast_setup
        a = render_piece(plan, backend, codec, SamplerConfig(seed=1))
        b = render_piece(plan, backend, codec, SamplerConfig(seed=2))
        assert not np.array_equal(a.grid.tokens, b.grid.tokens)


class TestRenderEngine:
    def test_render_form(self, sample_spec):
        engine = RenderEngine(
            backend=ToyBackend(num_codebooks=2, vocab_size=16, context_window=2),
            codec=random_codec(d=4, num_codebooks=2, codebook_size=16, seed=3),
            config=GenerationConfig(frame_rate=FrameRate(1)),
        )
        artifact = engine.render_form(sample_spec, seed=9)
        assert artifact.grid.num_steps == 150

    def test_grid_digest_sensitivity(self, rng):
        g1 = TokenGrid(tokens=rng.integers(0, 9, size=(4, 2)))
        g2 = TokenGrid(tokens=g1.tokens.copy())
        assert grid_digest(g1) == grid_digest(g2)
        g3 = TokenGrid(tokens=(g1.tokens + 1))
        assert grid_digest(g1) != grid_digest(g3)


class TestRenderCheckpoint:
    def test_backend_failure_leaves_part_checkpoint(self, sample_spec, tmp_path):
        from formgen.sampling import Checkpoint

        plan = plan_piece(sample_spec, FAST)
        codec = random_codec(d=8, num_codebooks=4, codebook_size=64, seed=7)

        class Flaky(ToyBackend):
            calls = 0

            def next_logits(self, ctx, condition):
                type(self).calls += 1
                if type(self).calls > 400:
                    raise RuntimeError("backend died")
                return super().next_logits(ctx, condition)

        backend = Flaky(num_codebooks=4, vocab_size=64, context_window=4)
        with pytest.raises(RuntimeError):
            render_piece(plan, backend, codec, SamplerConfig(seed=2),
                         checkpoint_dir=tmp_path)
        saved = sorted(p.name for p in tmp_path.glob("*.ckpt"))
        assert len(saved) == 1
        ckpt = Checkpoint.load(tmp_path / saved[0])
        assert ckpt.steps_done > 0
