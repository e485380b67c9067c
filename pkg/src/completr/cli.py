"""Command-line interface: sampling, synthesis, evaluation, pipeline stages,
and the review service."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .data import ImageStore, load_dataset, save_dataset
from .errors import CompletrError
from .evaluation import ap50
from .pipeline import PipelineConfig, run_pipeline
from .review import serve
from .sampling import (
    PARTIAL_ANNOTATIONS,
    PARTIAL_IMAGES,
    SamplingSpec,
    sample_partial_annotations,
    sample_partial_images,
)
from .synthetic import SynthConfig, generate_synthetic_dense, write_synthetic

STAGE_COMMANDS = {
    "pretrain": "pretrain",
    "finetune": "finetune",
    "complete": "complete",
    "train-detector": "train-detector",
    "pseudo-label": "pseudo-label",
}


def _parse_override(raw: str) -> tuple[list[str], object]:
    if "=" not in raw:
        raise SystemExit(f"override must look like key=value, got {raw!r}")
    key, value = raw.split("=", 1)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key.split("."), parsed


def _apply_overrides(config: dict, overrides: list[str]) -> dict:
    for raw in overrides or []:
        path, value = _parse_override(raw)
        node = config
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value
    return config


def _load_pipeline_config(args) -> PipelineConfig:
    with open(args.config, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    raw = _apply_overrides(raw, getattr(args, "override", None))
    return PipelineConfig.from_dict(raw)


def cmd_sample(args) -> int:
    mode = PARTIAL_IMAGES if args.mode == "pi" else PARTIAL_ANNOTATIONS
    spec = SamplingSpec(fraction=args.fraction, seed=args.seed, mode=mode)
    ds = load_dataset(getattr(args, "in"))
    if mode == PARTIAL_IMAGES:
        labeled, unlabeled = sample_partial_images(ds, spec)
        save_dataset(labeled, args.out)
        if args.out_unlabeled:
            save_dataset(unlabeled, args.out_unlabeled)
        kept = labeled.n_annotations
    else:
        sampled = sample_partial_annotations(ds, spec)
        save_dataset(sampled, args.out)
        kept = sampled.n_annotations
    print(json.dumps({"mode": args.mode, "fraction": args.fraction,
                      "seed": args.seed, "kept_annotations": kept,
                      "source_annotations": ds.n_annotations}))
    return 0


def cmd_evaluate(args) -> int:
    pred_ds = load_dataset(args.pred)
    gt = load_dataset(args.gt)
    report = ap50(list(pred_ds.iter_annotations()), gt)
    payload = report.to_dict()
    if not args.per_class:
        payload.pop("per_class")
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if "shapes" in raw:
        raw["shapes"] = tuple(raw["shapes"])
    for key in ("color_shift", "size_range", "background"):
        if key in raw:
            raw[key] = tuple(raw[key])
    cfg = SynthConfig(**raw)
    ds, pixels = generate_synthetic_dense(cfg)
    os.makedirs(args.out, exist_ok=True)
    write_synthetic(ds, pixels, args.out)
    save_dataset(ds, os.path.join(args.out, "annotations.json"))
    print(json.dumps({"n_images": ds.n_images, "n_annotations": ds.n_annotations,
                      "out": args.out}))
    return 0


def cmd_stage(stage: str):
    def run(args) -> int:
        cfg = _load_pipeline_config(args)
        cfg = PipelineConfig.from_dict({**cfg.to_dict(), "stages": [stage]})
        report = run_pipeline(cfg)
        print(json.dumps(report["stages"].get(stage, {}), sort_keys=True, default=str))
        return 0

    return run


def cmd_run(args) -> int:
    cfg = _load_pipeline_config(args)
    report = run_pipeline(cfg)
    print(json.dumps({"stages": sorted(report["stages"])}, sort_keys=True))
    return 0


def cmd_review(args) -> int:
    ds = load_dataset(args.annotations)
    serve(
        ds,
        args.image_root,
        bind=args.bind,
        journal_path=args.journal,
        static_dir=args.static,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="completr",
        description="Annotation completion for partially annotated dense scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="apply a PI/PA annotation-budget protocol")
    p.add_argument("--mode", choices=("pi", "pa"), required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="in", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--out-unlabeled", dest="out_unlabeled")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="AP50 of predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--per-class", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate the synthetic dense benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    for stage in STAGE_COMMANDS:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", required=True)
        p.add_argument("--override", action="append", metavar="key=value")
        p.set_defaults(func=cmd_stage(stage))

    p = sub.add_parser("run", help="run all configured stages")
    p.add_argument("--config", required=True)
    p.add_argument("--override", action="append", metavar="key=value")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("review", help="serve the human review UI/API")
    p.add_argument("--annotations", required=True)
    p.add_argument("--image-root", required=True)
    p.add_argument("--bind", default="127.0.0.1:8701")
    p.add_argument("--journal")
    p.add_argument("--static")
    p.set_defaults(func=cmd_review)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CompletrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
