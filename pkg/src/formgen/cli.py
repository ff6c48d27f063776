"""Operator entry point.

Subcommands mirror the workflow stages::

    formgen validate  FORM.json                 check a form document
    formgen generate  FORM.json --out DIR       render a piece (tokens, wav, manifest)
    formgen optimize  SEED.txt  --llm-fixture F run the two-phase prompt optimizer
    formgen report    RATINGS.csv --groups G    MOS table and group comparison
    formgen serve     --store DIR --clips DIR   run the rating service

Exit codes: 0 success, 1 domain violation, 2 I/O or configuration error.
Every command honors --config (JSON) and --seed. Credentials come from the
environment only (FORMGEN_LLM_API_KEY).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import Config, ConfigError, load_config

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_IO = 2


def _read_text(path: str) -> str:
    return Path(path).read_text()


def cmd_validate(args, config: Config) -> int:
    from .forms import FormError, parse_form, validate_form

    try:
        document = _read_text(args.form)
    except OSError as exc:
        print(f"error: cannot read {args.form}: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        spec = parse_form(document)
    except FormError as exc:
        print(f"malformed form: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    report = validate_form(spec, config.form_constraints())
    if report.valid:
        print(f"valid: {spec.num_parts} parts, {sum(p.length_s for p in spec.parts)} s total")
        return EXIT_OK
    for v in report.violations:
        where = "piece" if v.part_index == -1 else f"part {v.part_index}"
        print(f"violation [{v.rule}] ({where}): {v.message}")
    return EXIT_DOMAIN


def _make_backend(args, config: Config):
    from .backends import RemoteBackend, ToyBackend

    url = args.backend_url or config.backend_url
    if url:
        return RemoteBackend(base_url=url)
    preset = config.make_codec()
    return ToyBackend(
        num_codebooks=preset.num_codebooks, vocab_size=preset.codebook_size
    )


def cmd_generate(args, config: Config) -> int:
    from .backends import BackendUnavailable
    from .forms import FormError, parse_form
    from .orchestrator import (
        InvalidSpec,
        plan_piece,
        render_piece,
        write_manifest,
    )
    from .patterns import save_grid
    from .synth import SynthConfig, export_wav

    try:
        document = _read_text(args.form)
    except OSError as exc:
        print(f"error: cannot read {args.form}: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        spec = parse_form(document)
        plan = plan_piece(spec, config.generation_config())
    except (FormError, InvalidSpec) as exc:
        print(f"invalid form: {exc}", file=sys.stderr)
        return EXIT_DOMAIN

    codec = config.make_codec()
    backend = _make_backend(args, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        artifact = render_piece(plan, backend, codec, config.sampler_config(args.seed))
    except BackendUnavailable as exc:
        print(f"backend unreachable: {exc}", file=sys.stderr)
        return EXIT_IO

    write_manifest(artifact, out / "manifest.json")
    save_grid(out / "piece.tokens", artifact.grid, codec.codebook_size)
    export_wav(
        artifact.frames,
        out / "piece.wav",
        SynthConfig(steps_per_second=config.steps_per_second),
    )
    print(f"wrote {artifact.grid.num_steps} steps "
          f"({artifact.grid.num_steps / config.steps_per_second:.1f} s) to {out}")
    print(f"grid sha256: {artifact.manifest['grid_sha256']}")
    return EXIT_OK


def _load_fixture_clients(args, config: Config):
    from .optimizer import HttpLlmClient, ScriptedLlmClient

    if args.llm_fixture:
        body = json.loads(Path(args.llm_fixture).read_text())

        def build(part):
            if isinstance(part, list):
                return ScriptedLlmClient(responses=part)
            return ScriptedLlmClient(
                responses=part["responses"], cycle=bool(part.get("cycle", False))
            )

        return build(body["po"]), build(body["mp"])
    if config.llm_url:
        key = config.llm_api_key()
        return (
            HttpLlmClient(base_url=config.llm_url, model=config.llm_model, api_key=key),
            HttpLlmClient(base_url=config.llm_url, model=config.llm_model, api_key=key),
        )
    raise ConfigError("optimize needs --llm-fixture or llm_url in the config")


def cmd_optimize(args, config: Config) -> int:
    from .optimizer import (
        CandidatePrompt,
        OptimizerState,
        ORIGIN_SEED,
        PHASE_DONE,
        PHASE_EXPLOITATION,
        PHASE_EXPLORATION,
        SimulatedRater,
        exploration_histogram,
        load_state,
        render_histogram,
        render_trajectory,
        run_exploitation_step,
        run_exploration,
        save_state,
    )
    from .orchestrator import RenderEngine

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state_path = Path(args.state) if args.state else out / "optimizer-state.json"

    try:
        po_llm, mp_llm = _load_fixture_clients(args, config)
    except (OSError, KeyError, json.JSONDecodeError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    if args.resume and state_path.exists():
        state = load_state(state_path)
    else:
        try:
            seed_text = _read_text(args.seed_prompt).strip()
        except OSError as exc:
            print(f"error: cannot read seed prompt: {exc}", file=sys.stderr)
            return EXIT_IO
        opt_config = config.optimizer_config(args.seed)
        if args.iterations is not None:
            import dataclasses

            opt_config = dataclasses.replace(opt_config, max_iterations=args.iterations)
        state = OptimizerState(
            seed_prompt=CandidatePrompt(text=seed_text, origin=ORIGIN_SEED),
            config=opt_config,
        )

    engine = RenderEngine(
        backend=_make_backend(args, config),
        codec=config.make_codec(),
        config=config.generation_config(),
        sampler=config.sampler_config(args.seed),
    )
    rater = SimulatedRater(seed=args.seed)

    if state.phase == PHASE_EXPLORATION and (args.explore or not args.exploit):
        state = run_exploration(state, po_llm, mp_llm, engine, rater, state_path)
        report = exploration_histogram(state)
        (out / "exploration-histogram.json").write_text(json.dumps(report, indent=2))
        print(render_histogram(report))

    if args.exploit:
        while state.phase == PHASE_EXPLOITATION:
            state = run_exploitation_step(state, po_llm, mp_llm, engine, rater, state_path)
        print(render_trajectory(state))
        (out / "trajectory.json").write_text(
            json.dumps([t.__dict__ for t in state.trajectory], indent=2)
        )

    save_state(state, state_path)
    best = state.top_set[0] if state.top_set else state.seed_prompt
    print(f"phase: {state.phase}; best avg MOS: {best.avg_mos:.2f}")
    if state.phase == PHASE_DONE:
        (out / "best-prompt.txt").write_text(best.text)
    return EXIT_OK


def cmd_report(args, config: Config) -> int:
    from .mos import (
        EmptyGroup,
        compare_groups,
        mos_summary,
        read_ratings_csv,
        render_table,
        summaries_to_json,
    )

    try:
        ratings = read_ratings_csv(args.ratings)
        groups = json.loads(Path(args.groups).read_text())
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    by_clip: dict[str, list] = {}
    for r in ratings:
        by_clip.setdefault(r.clip_id, []).append(r)

    try:
        summaries = []
        grouped = {}
        for label, clip_ids in groups.items():
            grouped[label] = [r for cid in clip_ids for r in by_clip.get(cid, [])]
            summaries.append(mos_summary(grouped[label], label))
    except EmptyGroup as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN

    print(render_table(summaries))
    if args.out:
        Path(args.out).write_text(summaries_to_json(summaries))
    if args.compare:
        a_label, b_label = args.compare.split(",", 1)
        result = compare_groups(grouped[a_label], grouped[b_label])
        verdict = "significant" if result.significant else "not significant"
        print(
            f"Welch t({a_label} vs {b_label}): statistic={result.statistic:.4f} "
            f"p={result.p_value:.6g} ({verdict} at alpha=0.05)"
        )
    return EXIT_OK


def cmd_serve(args, config: Config) -> int:
    import uvicorn

    from .service import RatingStore, create_app, default_qualification_spec

    store = RatingStore(
        args.store or config.store_path, qualification=default_qualification_spec()
    )
    clips_dir = Path(args.clips or config.clips_path)
    if clips_dir.is_dir():
        for wav in sorted(clips_dir.glob("*.wav")):
            store.register_clip(wav.stem, wav)
    app = create_app(store)
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="formgen", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"formgen {__version__}")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a form document")
    p.add_argument("form")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("generate", help="render a piece from a form")
    p.add_argument("form")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--backend-url", help="remote backend base URL (default: toy backend)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("optimize", help="two-phase prompt optimization")
    p.add_argument("seed_prompt", help="file with the seed instruction prompt")
    p.add_argument("--explore", action="store_true", help="run the exploration phase")
    p.add_argument("--exploit", action="store_true", help="run exploitation to the stop rule")
    p.add_argument("--iterations", type=int, help="override max exploitation iterations")
    p.add_argument("--llm-fixture", help='JSON {"po": [...], "mp": [...]} scripted responses')
    p.add_argument("--backend-url", help="remote backend base URL")
    p.add_argument("--state", help="optimizer state file (default: OUT/optimizer-state.json)")
    p.add_argument("--resume", action="store_true", help="continue from the state file")
    p.add_argument("--out", default="opt-out", help="output directory")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("report", help="MOS table from a ratings CSV")
    p.add_argument("ratings", help="ratings CSV (rater_id,clip_id,score,timestamp,context)")
    p.add_argument("--groups", required=True, help='JSON file {label: [clip ids]}')
    p.add_argument("--compare", help="two group labels to compare, e.g. LABEL_A,LABEL_B")
    p.add_argument("--out", help="also write summaries as JSON")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the rating service")
    p.add_argument("--store", help="store directory")
    p.add_argument("--clips", help="directory of WAV clips to register")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8400)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_IO
    return args.func(args, config)


if __name__ == "__main__":
    sys.exit(main())
