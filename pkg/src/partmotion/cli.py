"""Command-line entry point: extract, synth, train, sample, eval, export.

Exit codes: 0 success, 1 usage, 2 data error, 3 external-service error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .checkpoint import CheckpointError, PipelineCheckpoint, load_pipeline, save_pipeline
from .encoders import text_encode
from .llm import DEFAULT_ENDPOINT, DEFAULT_KEY_ENV, DEFAULT_MODEL, FixtureClient, HttpChatClient, \
    LlmConfigError, LlmTransportError
from .motion import LayoutError, MotionSequence, canonical_layout, canonical_skeleton, load_motion, save_motion
from .pipeline import GenerationRequest, PipelineModel, generate, sample_unconditional, stage1_generate
from .semantics import fallback_extractor, llm_extractor
from .synth import DEFAULT_RECIPES, RECIPES, build_dataset, load_manifest
from .training import TrainConfig, load_items, train_stage1, train_stage2, train_unconditional

log = logging.getLogger("partmotion")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_EXTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj, out: str | None = None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _client_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--client", choices=("http", "fixture", "fallback"), default="fallback")
    p.add_argument("--fixture", help="transcript JSONL replayed by --client fixture")
    p.add_argument("--endpoint", default=DEFAULT_ENDPOINT)
    p.add_argument("--model", default=DEFAULT_MODEL)
    p.add_argument("--api-key-env", default=DEFAULT_KEY_ENV)


def _extractor(args):
    if args.client == "fallback":
        return fallback_extractor
    if args.client == "fixture":
        if not args.fixture:
            raise UsageError("--client fixture needs --fixture")
        return llm_extractor(FixtureClient.from_file(args.fixture))
    return llm_extractor(HttpChatClient(args.endpoint, args.model, args.api_key_env))


# ------------------------------------------------------------------ extract

def cmd_extract(args) -> int:
    if bool(args.text) == bool(args.manifest):
        raise UsageError("give exactly one of --text or --manifest")
    extract = _extractor(args)
    sentences = [args.text] if args.text else [r.caption for r in load_manifest(args.manifest)]
    for s in sentences:
        spec, transcripts = extract(s)
        print(json.dumps({
            "text": s,
            "parts": sorted(spec.parts) or ["none"],
            "spec": spec.to_dict(),
            "verdicts": [t.verdict.value for t in transcripts],
        }, sort_keys=True))
    return EXIT_OK


# -------------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    names = args.recipes.split(",") if args.recipes else [r.name for r in DEFAULT_RECIPES]
    unknown = [n for n in names if n not in RECIPES]
    if unknown:
        raise UsageError(f"unknown recipes {unknown}; known: {sorted(RECIPES)}")
    records = build_dataset([RECIPES[n] for n in names], args.count, args.seed, args.out,
                            frames=args.frames, test_fraction=args.test_fraction)
    n_none = sum(r.spec.is_none for r in records)
    print(f"wrote {len(records)} records ({n_none} non-interactive) to {args.out}")
    return EXIT_OK


# -------------------------------------------------------------------- train

_CONFIG_FIELDS = [f for f in dataclasses.fields(TrainConfig)]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for f in _CONFIG_FIELDS:
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            p.add_argument(flag, dest=f.name, type=lambda s: s.lower() in ("1", "true", "yes"), default=None)
        elif f.name == "gcn_hidden":
            p.add_argument(flag, dest=f.name, type=lambda s: [int(v) for v in s.split(",")], default=None)
        elif f.name in ("beta_start", "beta_end", "lr", "cond_dropout", "guidance_scale"):
            p.add_argument(flag, dest=f.name, type=float, default=None)
        else:
            p.add_argument(flag, dest=f.name, type=int, default=None)


def resolve_config(config_path: str | None, overrides: dict) -> TrainConfig:
    """Defaults, then the config file, then explicit flags."""
    doc = {}
    if config_path:
        doc = json.loads(Path(config_path).read_text())
        if not isinstance(doc, dict):
            raise ValueError(f"{config_path}: config must be a JSON object")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(doc)


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, {f.name: getattr(args, f.name) for f in _CONFIG_FIELDS})
    layout, skeleton = canonical_layout(), canonical_skeleton()
    data = Path(args.data)
    records = load_manifest(data / "manifest.jsonl")
    items = load_items(records, data, layout, skeleton, "train")
    if not items:
        raise ValueError("no training records in the manifest")
    stage1, _ = train_stage1(items, cfg)
    source = None
    if not cfg.teacher_forcing:
        model = PipelineModel(layout, skeleton, cfg.schedule(), stage1, None, None)
        frames = items[0].x0.shape[0]
        source = [it.x0 * 0.0 if it.spec.is_none else
                  stage1_generate(model, it.caption, it.spec, cfg.seed + i, frames, cfg.guidance_scale)
                  for i, it in enumerate(items)]
    stage2, gcn, _ = train_stage2(items, cfg, layout, skeleton, x_inter_source=source)
    baseline = None if args.no_baseline else train_unconditional(items, cfg)[0]
    save_pipeline(args.out, PipelineCheckpoint(cfg, layout, cfg.schedule().betas, stage1, stage2, gcn, baseline))
    print(f"wrote checkpoint {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------- sample

def _request(args, text: str, seed: int) -> GenerationRequest:
    return GenerationRequest(text, seed=seed, frames=args.frames, guidance_scale=args.guidance_scale,
                             stage2_guidance_scale=args.stage2_guidance_scale, stochastic=not args.deterministic)


def cmd_sample(args) -> int:
    if bool(args.text) == bool(args.manifest):
        raise UsageError("give exactly one of --text or --manifest")
    ckpt = load_pipeline(args.checkpoint)
    model = ckpt.model()
    extract = _extractor(args)
    if args.text:
        trace = generate(_request(args, args.text, args.seed), model, extract)
        save_motion(trace.final, args.out)
        if args.trace:
            _emit(trace.to_dict(), args.trace)
        print(f"wrote {args.out}")
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = [r for r in load_manifest(args.manifest) if args.split is None or r.split == args.split]
    traces = []
    for i, r in enumerate(records):
        seed = args.seed + i
        name = Path(r.path).name
        if args.baseline:
            if ckpt.baseline is None:
                raise ValueError("checkpoint has no baseline model")
            frames = sample_unconditional(ckpt.baseline, model, seed, args.frames, not args.deterministic)
            save_motion(MotionSequence(frames, model.layout, model.fps), out / name)
            continue
        trace = generate(_request(args, r.caption, seed), model, extract)
        save_motion(trace.final, out / name)
        traces.append({"id": r.id, **trace.to_dict()})
    if args.trace and traces:
        Path(args.trace).write_text("".join(json.dumps(t, sort_keys=True) + "\n" for t in traces))
    print(f"wrote {len(records)} motions to {out}")
    return EXIT_OK


# --------------------------------------------------------------------- eval

def evaluate(records, data_dir, pred_dir, seed: int = 0, pool_size: int = 32,
             train_records=None) -> list[dict]:
    """Metric rows ``{name, value, count, seed}`` for predictions named like the records."""
    data_dir, pred_dir = Path(data_dir), Path(pred_dir)
    skeleton = canonical_skeleton()
    gts = [load_motion(data_dir / r.path) for r in records]
    preds = [load_motion(pred_dir / Path(r.path).name) for r in records]
    for r, p, g in zip(records, preds, gts):
        if p.frames.shape != g.frames.shape:
            raise ValueError(f"{r.id}: prediction shape {p.frames.shape} != {g.frames.shape}")
    pj = [metrics.to_joint_positions(p) for p in preds]
    gj = [metrics.to_joint_positions(g) for g in gts]
    n = len(records)
    rows = []

    def row(name, value, count):
        rows.append({"name": name, "value": float(value), "count": int(count), "seed": seed})

    row("mpjpe", np.mean([metrics.mpjpe(a, b) for a, b in zip(pj, gj)]), n)
    row("mpvpe", np.mean([metrics.mpvpe(a, b) for a, b in zip(pj, gj)]), n)
    row("hand_jpe", np.mean([metrics.hand_jpe(a, b) for a, b in zip(pj, gj)]), n)
    row("foot_jpe", np.mean([metrics.foot_jpe(a, b) for a, b in zip(pj, gj)]), n)

    inter = [i for i, r in enumerate(records) if not r.spec.is_none]
    if inter:
        row("masked_part_mpjpe",
            np.mean([metrics.masked_part_mpjpe(preds[i], gts[i], records[i].spec.parts, skeleton) for i in inter]),
            len(inter))
        row("part_energy_accuracy",
            metrics.part_energy_accuracy([preds[i] for i in inter], [records[i].spec.parts for i in inter], skeleton),
            len(inter))

    fit = train_records if train_records else records
    enc = metrics.train_motion_encoder([load_motion(data_dir / r.path) for r in fit], [r.caption for r in fit],
                                       seed=seed)
    m_emb = enc.encode_many(preds)
    t_emb = np.stack([text_encode(r.caption) for r in records])
    pool = min(pool_size, n)
    row(f"r_precision_top3@{pool}", metrics.r_precision_top3(m_emb, t_emb, pool, seed), n)
    row("mm_dist", metrics.mm_dist(m_emb, t_emb), n)
    return rows


def cmd_eval(args) -> int:
    data = Path(args.data)
    all_records = load_manifest(data / "manifest.jsonl")
    records = [r for r in all_records if args.split is None or r.split == args.split]
    if not records:
        raise ValueError(f"no records in split {args.split!r}")
    train = [r for r in all_records if r.split == "train"]
    rows = evaluate(records, data, args.pred, args.seed, args.pool_size, train)
    _emit({"seed": args.seed, "split": args.split, "metrics": rows}, args.out)
    return EXIT_OK


# ------------------------------------------------------------------- export

def cmd_export(args) -> int:
    motion = load_motion(args.motion)
    joints = metrics.to_joint_positions(motion)
    lines = [json.dumps({"frame": i, "time": i / motion.fps, "joints": np.round(j, 6).tolist()})
             for i, j in enumerate(joints)]
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lines)} frames to {args.out}")
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="partmotion", description="Part-aware text-to-motion diffusion toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("extract", help="find interactive body parts in text")
    e.add_argument("--text")
    e.add_argument("--manifest")
    _client_args(e)
    e.set_defaults(func=cmd_extract)

    s = sub.add_parser("synth", help="write the procedural dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=30, help="records per recipe")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=16)
    s.add_argument("--recipes", help="comma-separated recipe names")
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train both stages, the Part-GCN and the baseline")
    t.add_argument("--data", required=True, help="dataset directory holding manifest.jsonl")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--config", help="JSON file of training fields")
    t.add_argument("--no-baseline", action="store_true")
    _add_config_flags(t)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("sample", help="generate motions")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--text")
    g.add_argument("--manifest")
    g.add_argument("--split", default="test")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames", type=int, default=16)
    g.add_argument("--guidance-scale", type=float, default=2.5)
    g.add_argument("--stage2-guidance-scale", type=float, help="defaults to --guidance-scale")
    g.add_argument("--deterministic", action="store_true", help="skip reverse-step noise")
    g.add_argument("--baseline", action="store_true", help="sample the unconditional model instead")
    g.add_argument("--out", required=True, help="motion file (--text) or directory (--manifest)")
    g.add_argument("--trace")
    _client_args(g)
    g.set_defaults(func=cmd_sample)

    v = sub.add_parser("eval", help="score predicted motions against the dataset")
    v.add_argument("--data", required=True)
    v.add_argument("--pred", required=True, help="directory of predicted motions named like the records")
    v.add_argument("--split", default="test")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--pool-size", type=int, default=32)
    v.add_argument("--out")
    v.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="write per-frame joint positions as JSONL")
    x.add_argument("--motion", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"partmotion: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (LlmConfigError, LlmTransportError) as e:
        print(f"partmotion: external service: {e}", file=sys.stderr)
        return EXIT_EXTERNAL
    except (OSError, ValueError, KeyError, LayoutError, CheckpointError) as e:
        print(f"partmotion: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
