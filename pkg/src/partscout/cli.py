"""Command-line entry points for every pipeline stage.

Model-dependent stages accept ``--replay <fixture>`` to run offline from
recorded responses (and ``--record <fixture>`` to capture live ones), so
the whole flow is reproducible without API access.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import annotate as annotate_mod
from . import corpus as corpus_mod
from . import datasetgen, evaluate, notebook as notebook_mod, pipeline, rag
from .gateway import (
    Backend,
    RecordingBackend,
    ReplayFixture,
    RetryPolicy,
    backend_from_env,
    parallel_map,
    replay_backend,
)


def _add_backend_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", default=None, help="model name (default: MODEL_NAME env)")
    parser.add_argument("--dialect", choices=["openai", "gemini"], default=None)
    parser.add_argument("--replay", metavar="FIXTURE", help="answer from a recorded fixture")
    parser.add_argument("--record", metavar="FIXTURE", help="record live responses to a fixture")
    parser.add_argument("--workers", type=int, default=4)
    parser.add_argument("--max-retries", type=int, default=3)
    parser.add_argument(
        "--templates", metavar="DIR", help="directory of <template_id>.txt overrides"
    )


def _resolve_backend(args) -> tuple[Backend, ReplayFixture | None]:
    if args.replay:
        return replay_backend(ReplayFixture.load(args.replay)), None
    backend = backend_from_env(dialect=args.dialect)
    if args.record:
        fixture = ReplayFixture()
        return RecordingBackend(backend, fixture), fixture
    return backend, None


def _finish_recording(args, fixture: ReplayFixture | None) -> None:
    if fixture is not None and args.record:
        fixture.save(args.record)


def _model_name(args) -> str:
    import os

    name = args.model or os.environ.get("MODEL_NAME")
    if not name:
        raise SystemExit("no model name: pass --model or set MODEL_NAME")
    return name


def _policy(args) -> RetryPolicy:
    return RetryPolicy(max_retries=args.max_retries)


def _template_for(args, template_id: str):
    from .prompts import DEFAULT_TEMPLATES, load_template_dir

    if getattr(args, "templates", None):
        return load_template_dir(args.templates)[template_id]
    return DEFAULT_TEMPLATES[template_id]


def _load_desc_maps(index: corpus_mod.CorpusIndex, assembly_ids=None) -> dict[str, dict[str, str]]:
    maps: dict[str, dict[str, str]] = {}
    wanted = set(assembly_ids) if assembly_ids is not None else None
    for record in index:
        if wanted is not None and record.assembly_id not in wanted:
            continue
        path = record.directory / corpus_mod.DESCRIPTIONS_NAME
        if path.exists():
            maps[record.assembly_id] = corpus_mod.load_description_map(path)
    return maps


def _cmd_describe(args) -> int:
    index = corpus_mod.scan_dataset(args.corpus)
    backend, fixture = _resolve_backend(args)
    model = _model_name(args)
    failures = 0
    for record in index:
        report = pipeline.describe_parts(
            record, backend, model, worker_limit=args.workers, policy=_policy(args),
            template=_template_for(args, "part_description"),
        )
        failures += len(report.failures)
        print(
            f"{record.assembly_id}: {len(report.descriptions)}/{record.part_count} described",
            file=sys.stderr,
        )
        for name, reason in report.failures.items():
            print(f"  failed {name}: {reason}", file=sys.stderr)
    _finish_recording(args, fixture)
    for problem in index.errors:
        print(f"skipped {problem.assembly_id}: {problem.message}", file=sys.stderr)
    return 0 if failures == 0 else 1


def _cmd_specgen(args) -> int:
    index = corpus_mod.scan_dataset(args.corpus)
    backend, fixture = _resolve_backend(args)
    model = _model_name(args)
    desc_maps = _load_desc_maps(index)
    report = datasetgen.generate_spec_items(
        index,
        desc_maps,
        backend,
        model,
        worker_limit=args.workers,
        policy=_policy(args),
        per_assembly=args.per_assembly,
        template=_template_for(args, "spec_generation"),
    )
    corpus_mod.save_spec_items(report.items, args.out)
    _finish_recording(args, fixture)
    print(f"wrote {len(report.items)} spec items to {args.out}", file=sys.stderr)
    for assembly_id, reason in sorted(report.failures.items()):
        print(f"unresolved {assembly_id}: {reason}", file=sys.stderr)
    return 0


def _run_specs(args, infer_one) -> int:
    """Shared driver: fan out over spec items, write results.jsonl."""
    spec_items = sorted(corpus_mod.load_spec_items(args.specs), key=lambda s: s.spec_id)
    outcomes = parallel_map(spec_items, args.workers, infer_one)
    results = []
    for item, outcome in zip(spec_items, outcomes):
        if outcome.ok:
            results.append(outcome.value)
        else:
            error = outcome.error
            results.append(
                pipeline.RetrievalResult(
                    spec_id=item.spec_id,
                    predicted=(),
                    cot_text="",
                    parse_status=pipeline.PARSE_FAILED,
                    transport_error=f"{type(error).__name__}: {error}",
                )
            )
    pipeline.save_results(results, args.out)
    print(f"wrote {len(results)} results to {args.out}", file=sys.stderr)
    return 0


def _cmd_retrieve(args) -> int:
    if args.image_only and args.fewshot:
        raise SystemExit("--image-only and --fewshot cannot be combined")
    index = corpus_mod.scan_dataset(args.corpus)
    backend, fixture = _resolve_backend(args)
    model = _model_name(args)
    policy = _policy(args)
    desc_maps = {} if args.image_only else _load_desc_maps(index)

    fewshot_notebook = None
    spec_index = None
    if args.fewshot:
        fewshot_notebook = notebook_mod.load_notebook(args.fewshot)
        spec_index = rag.build_index(fewshot_notebook)

    def infer_one(item: corpus_mod.SpecItem) -> pipeline.RetrievalResult:
        assembly = index.get(item.assembly_id)
        if fewshot_notebook is not None:
            return rag.rag_infer(
                item, assembly, desc_maps[item.assembly_id], fewshot_notebook,
                backend, model, k=args.k, mode=rag.MODE_COT, index=spec_index,
                policy=policy, template=_template_for(args, "retrieval_task"),
            )
        return pipeline.retrieve_parts(
            assembly,
            None if args.image_only else desc_maps[item.assembly_id],
            item,
            backend,
            model,
            policy=policy,
            image_only=args.image_only,
            template=_template_for(args, "retrieval_task"),
        )

    status = _run_specs(args, infer_one)
    _finish_recording(args, fixture)
    return status


def _cmd_notebook_build(args) -> int:
    index = corpus_mod.scan_dataset(args.corpus)
    backend, fixture = _resolve_backend(args)
    model = _model_name(args)
    results = pipeline.load_results(args.results)
    spec_items = corpus_mod.load_spec_items(args.specs)
    desc_maps = _load_desc_maps(index)
    built, exclusions = notebook_mod.build_notebook(
        results,
        spec_items,
        index,
        desc_maps,
        backend,
        model,
        policy=_policy(args),
        worker_limit=args.workers,
        run_id=args.run_id,
        template=_template_for(args, "cot_correction"),
    )
    notebook_mod.save_notebook(built, args.out)
    _finish_recording(args, fixture)
    print(f"wrote {len(built)} entries to {args.out}", file=sys.stderr)
    for record in exclusions:
        print(f"excluded {record.spec_id}: {record.reason}", file=sys.stderr)
    return 0


def _cmd_infer_rag(args) -> int:
    index = corpus_mod.scan_dataset(args.corpus)
    backend, fixture = _resolve_backend(args)
    model = _model_name(args)
    policy = _policy(args)
    desc_maps = _load_desc_maps(index)
    loaded = notebook_mod.load_notebook(args.notebook)
    spec_index = rag.build_index(loaded)
    mode = args.mode.replace("-", "_")

    def infer_one(item: corpus_mod.SpecItem) -> pipeline.RetrievalResult:
        assembly = index.get(item.assembly_id)
        return rag.rag_infer(
            item, assembly, desc_maps[item.assembly_id], loaded, backend, model,
            k=args.k, mode=mode, index=spec_index, policy=policy,
            template=_template_for(args, "retrieval_task"),
        )

    status = _run_specs(args, infer_one)
    _finish_recording(args, fixture)
    return status


def _cmd_eval(args) -> int:
    index = corpus_mod.scan_dataset(args.corpus)
    results = pipeline.load_results(args.results)
    spec_items = corpus_mod.load_spec_items(args.specs)
    report = evaluate.score_run(results, spec_items, index, run_id=args.run_id)
    rendered = evaluate.emit_report(report, args.format)
    if args.out:
        Path(args.out).write_text(rendered, encoding="utf-8")
        print(f"wrote report to {args.out}", file=sys.stderr)
    else:
        print(rendered, end="")
    return 0


def _cmd_ablate(args) -> int:
    index = corpus_mod.scan_dataset(args.corpus)
    backend, fixture = _resolve_backend(args)
    model = _model_name(args)
    spec_items = sorted(corpus_mod.load_spec_items(args.specs), key=lambda s: s.spec_id)
    desc_maps = _load_desc_maps(index)
    loaded = notebook_mod.load_notebook(args.notebook)
    counts = [int(piece) for piece in args.counts.split(",") if piece]
    modes = [piece.replace("-", "_") for piece in args.modes.split(",") if piece]
    table = evaluate.run_ablation(
        spec_items,
        index,
        desc_maps,
        loaded,
        backend,
        model,
        counts=counts,
        modes=modes,
        cache_dir=args.cache_dir,
        worker_limit=args.workers,
        policy=_policy(args),
        template=_template_for(args, "retrieval_task"),
    )
    rendered = evaluate.emit_ablation(table, args.format)
    _finish_recording(args, fixture)
    if args.out:
        Path(args.out).write_text(rendered, encoding="utf-8")
        print(f"wrote ablation to {args.out}", file=sys.stderr)
    else:
        print(rendered, end="")
    return 0


def _cmd_bundles(args) -> int:
    import shlex

    index = corpus_mod.scan_dataset(args.corpus)
    spec_items = corpus_mod.load_spec_items(args.specs)
    invoker = datasetgen.subprocess_invoker(shlex.split(args.renderer))
    bundles = datasetgen.make_annotation_bundles(spec_items, index, invoker, args.out)
    flagged = sum(1 for bundle in bundles if bundle.flags)
    print(f"wrote {len(bundles)} bundles to {args.out} ({flagged} flagged)", file=sys.stderr)
    return 0


def _cmd_annotate_serve(args) -> int:
    server = annotate_mod.serve(
        args.bundles, port=args.port, host=args.host, frontend_dir=args.frontend
    )
    print(
        f"annotation service on http://{args.host}:{server.server_address[1]} "
        f"(bundles: {args.bundles})",
        file=sys.stderr,
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def _cmd_annotate_export(args) -> int:
    store = annotate_mod.BundleStore(args.bundles)
    items = store.export_spec_items()
    corpus_mod.save_spec_items(items, args.out)
    summary = store.summary()
    print(
        f"exported {len(items)} kept items to {args.out} "
        f"(pending {summary['pending']}, discarded {summary['discarded']}, "
        f"by reason {json.dumps(summary['discarded_by_reason'], sort_keys=True)})",
        file=sys.stderr,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partscout",
        description="Specification-driven part retrieval for CAD assemblies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", help="stage 1: generate per-part descriptions")
    p.add_argument("--corpus", required=True)
    _add_backend_args(p)
    p.set_defaults(fn=_cmd_describe)

    p = sub.add_parser("specgen", help="generate assembly specifications")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default="specs.jsonl")
    p.add_argument("--per-assembly", type=int, default=1)
    _add_backend_args(p)
    p.set_defaults(fn=_cmd_specgen)

    p = sub.add_parser("retrieve", help="stage 2: specification-aware retrieval")
    p.add_argument("--corpus", required=True)
    p.add_argument("--specs", required=True)
    p.add_argument("--fewshot", help="notebook file to draw exemplars from")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--image-only", action="store_true", help="single-step image baseline")
    p.add_argument("--out", default="results.jsonl")
    _add_backend_args(p)
    p.set_defaults(fn=_cmd_retrieve)

    p = sub.add_parser("notebook", help="error notebook operations")
    notebook_sub = p.add_subparsers(dest="notebook_command", required=True)
    b = notebook_sub.add_parser("build", help="grade a run and build the notebook")
    b.add_argument("--results", required=True)
    b.add_argument("--specs", required=True)
    b.add_argument("--corpus", required=True)
    b.add_argument("--out", default="notebook.jsonl")
    b.add_argument("--run-id", default="")
    _add_backend_args(b)
    b.set_defaults(fn=_cmd_notebook_build)

    p = sub.add_parser("infer-rag", help="retrieval-augmented inference")
    p.add_argument("--corpus", required=True)
    p.add_argument("--specs", required=True)
    p.add_argument("--notebook", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--mode", choices=["cot", "answer-only", "answer_only"], default="cot")
    p.add_argument("--out", default="results.jsonl")
    _add_backend_args(p)
    p.set_defaults(fn=_cmd_infer_rag)

    p = sub.add_parser("eval", help="score a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--specs", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p.add_argument("--out")
    p.add_argument("--run-id", default="run")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="exemplar-count x mode sweep")
    p.add_argument("--corpus", required=True)
    p.add_argument("--specs", required=True)
    p.add_argument("--notebook", required=True)
    p.add_argument("--counts", default="1,5,10,20,50")
    p.add_argument("--modes", default="cot,answer-only")
    p.add_argument("--cache-dir")
    p.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p.add_argument("--out")
    _add_backend_args(p)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("bundles", help="emit annotation bundles with merged renders")
    p.add_argument("--specs", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--renderer", required=True, help="render tool command")
    p.add_argument("--out", default="bundles")
    p.set_defaults(fn=_cmd_bundles)

    p = sub.add_parser("annotate", help="human annotation loop")
    annotate_sub = p.add_subparsers(dest="annotate_command", required=True)
    s = annotate_sub.add_parser("serve", help="run the review service")
    s.add_argument("--bundles", required=True)
    s.add_argument("--port", type=int, default=8787)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--frontend", help="static review app directory")
    s.set_defaults(fn=_cmd_annotate_serve)
    e = annotate_sub.add_parser("export", help="export kept items as spec file")
    e.add_argument("--bundles", required=True)
    e.add_argument("--out", default="specs_human.jsonl")
    e.set_defaults(fn=_cmd_annotate_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (corpus_mod.CorpusError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
