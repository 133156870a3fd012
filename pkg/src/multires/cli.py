"""Command-line surface: data synthesis, unit preparation, pre-training,
feature extraction, cost profiling, benchmark scoring, config validation."""

from __future__ import annotations

import argparse
import os
import sys
from importlib import resources

import numpy as np

from . import analysis, audio, config as cfgmod, quantizer, trainer
from .errors import MultiresError
from .frontend import output_length
from .model import MultiResModel, restore_model, save_checkpoint


def _load_config(args) -> cfgmod.ModelConfig:
    if getattr(args, "preset", None):
        cfg = cfgmod.preset(args.preset)
    elif getattr(args, "config", None):
        cfg = cfgmod.load(args.config)
    else:
        raise MultiresError("provide --preset or --config")
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise MultiresError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if overrides:
        cfg = cfgmod.apply_overrides(cfg, overrides)
    return cfg


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help="named preset configuration")
    p.add_argument("--config", help="path to a config text file "
                                    "(relative names also resolve under $MULTIRES_CONFIG_DIR)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")


def cmd_synth_data(args) -> int:
    entries = audio.synth_dataset(args.n, args.min_seconds, args.max_seconds,
                                  args.seed, args.out)
    print(f"wrote {len(entries)} utterances and manifest.tsv to {args.out}")
    return 0


def cmd_prepare_units(args) -> int:
    cfg = _load_config(args)
    if args.codebook_size:
        cfg = cfgmod.apply_overrides(cfg, {"codebook_size": str(args.codebook_size)})
    os.makedirs(args.out, exist_ok=True)
    entries = audio.read_manifest(args.manifest)
    if args.checkpoint:
        model, _, _ = restore_model(args.checkpoint)
    else:
        seeded = cfgmod.apply_overrides(cfg, {"seed": str(args.seed)})
        model = MultiResModel(seeded)
    feats = []
    for e in entries:
        feats.append(model.frontend_feature_array(audio.read_wav(e.path)))
    stacked = np.concatenate(feats, axis=0)
    codebook = quantizer.fit_kmeans(stacked, cfg.codebook_size, seed=args.seed)
    quantizer.write_codebook(os.path.join(args.out, "codebook.bin"), codebook)
    native = cfg.resolutions_ms[0]
    high_units = [quantizer.assign(f, codebook, native, e.utt_id)
                  for f, e in zip(feats, entries)]
    for res in cfg.resolutions_ms:
        if res % native:
            raise MultiresError(
                f"resolution {res} ms is not an integer multiple of the native {native} ms; "
                "units cannot be skip-subsampled")
        factor = res // native
        seqs = [quantizer.subsample_units(u, factor) for u in high_units]
        quantizer.write_unit_file(os.path.join(args.out, f"units_{res}ms.txt"), seqs)
    quantizer.write_units_manifest(os.path.join(args.out, "units_manifest.tsv"),
                                   [e.utt_id for e in entries],
                                   [e.path for e in entries])
    print(f"wrote codebook (K={codebook.k}) and unit files for "
          f"{len(entries)} utterances to {args.out}")
    return 0


def _unit_paths(units_dir: str, cfg: cfgmod.ModelConfig) -> tuple[str, ...]:
    return tuple(os.path.join(units_dir, f"units_{res}ms.txt") for res in cfg.resolutions_ms)


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    if args.seed is not None:
        cfg = cfgmod.apply_overrides(cfg, {"seed": str(args.seed)})
    defaults = cfgmod.training_defaults(args.preset or "default")
    steps = args.steps if args.steps is not None else defaults["max_steps"]
    warmup = args.warmup if args.warmup is not None else min(defaults["warmup_steps"], steps)
    peak = args.peak_lr if args.peak_lr is not None else defaults["peak_lr"]
    run_cfg = trainer.TrainRunConfig(
        max_steps=steps, warmup_steps=warmup, peak_lr=peak, seed=cfg.seed,
        out_dir=args.out, manifest_path=args.manifest or "",
        unit_paths=_unit_paths(args.units, cfg) if args.units else (),
        batch_max_frames=args.batch_max_frames,
        checkpoint_interval=args.checkpoint_interval,
        decay_shape=args.decay_shape)
    if args.resume:
        model, resume_step, opt = restore_model(args.resume, expect_config=cfg)
    else:
        model, resume_step, opt = MultiResModel(cfg), 0, None
    if steps > resume_step and not (args.manifest and args.units):
        raise MultiresError("--manifest and --units are required for a non-zero-step run")
    final = trainer.run(model, run_cfg, resume_step=resume_step, resume_opt=opt)
    metrics = os.path.join(args.out, "metrics.tsv")
    if os.path.exists(metrics) and steps > resume_step:
        from .report import render_training_curves
        render_training_curves(metrics, os.path.join(args.out, "metrics.png"))
    print(f"final checkpoint: {final}")
    return 0


def cmd_extract(args) -> int:
    from .container import write_states

    model, _, _ = restore_model(args.checkpoint)
    states = model.extract_features(audio.read_wav(args.audio),
                                    include_frontend=args.include_frontend)
    write_states(args.out, states)
    print(f"wrote {len(states)} states to {args.out}")
    return 0


def cmd_profile(args) -> int:
    cfg = _load_config(args)
    durations = tuple(float(x) for x in args.durations.split(","))
    durations = tuple(int(x) if x.is_integer() else x for x in durations)
    report = analysis.macs(cfg, durations, include_heads=args.include_heads,
                           include_attention_products=args.include_attention)
    name = args.preset or args.config
    print(f"configuration: {name}")
    print(f"durations (s): {', '.join(str(d) for d in durations)}")
    width = max(len(m) for m in report.per_module)
    header = f"{'module':<{width}} " + " ".join(f"{d!s:>12}" for d in durations) + f" {'total':>14}"
    print(header)
    print("-" * len(header))
    for module in report.per_module:
        cells = " ".join(f"{report.per_module[module].get(d, 0):>12,}" for d in durations)
        print(f"{module:<{width}} {cells} {report.module_totals[module]:>14,}")
    print("-" * len(header))
    cells = " ".join(f"{report.duration_totals[d]:>12,}" for d in durations)
    print(f"{'total':<{width}} {cells} {report.grand_total:>14,}")
    print(f"total: {analysis.giga(report.grand_total):.1f}G MACs")
    print(f"parameters: total {report.params['total']:,} "
          f"(backbone {report.params['total_backbone']:,})")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("module,duration_s,macs\n")
            for module, by_dur in report.per_module.items():
                for d, v in by_dur.items():
                    fh.write(f"{module},{d},{v}\n")
            for d, v in report.duration_totals.items():
                fh.write(f"total,{d},{v}\n")
            fh.write(f"grand_total,,{report.grand_total}\n")
    if args.figure:
        from .report import render_macs_figure
        render_macs_figure(report, args.figure, title=str(name))
    return 0


def _default_anchors_path() -> str:
    return str(resources.files("multires").joinpath("data/superb_anchors.csv"))


def cmd_score(args) -> int:
    anchors = analysis.read_anchors(args.anchors or _default_anchors_path())
    metrics = analysis.read_metrics_csv(args.metrics)
    grouping = analysis.category_grouping(anchors, args.tasks)
    score = analysis.superb_score(metrics, anchors, grouping)
    per_task = {}
    for task, names in grouping.items():
        vals = [(metrics[n] - anchors[n].fbank) / (anchors[n].sota - anchors[n].fbank)
                for n in names]
        per_task[task] = sum(vals) / len(vals)
    print(f"benchmark score ({args.tasks}): {score:.1f}")
    for task, v in per_task.items():
        print(f"  {task}: {1000 * v:.1f}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("task,normalized\n")
            for task, v in per_task.items():
                fh.write(f"{task},{v:.6f}\n")
            fh.write(f"score,{score:.3f}\n")
    if args.figure:
        from .report import render_score_figure
        render_score_figure(per_task, score, args.figure)
    return 0


def cmd_validate_config(args) -> int:
    cfg = _load_config(args)
    problems = cfgmod.validate(cfg)
    if not problems:
        print("ok")
        return 0
    for p in problems:
        print(f"violation: {p}")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multires",
        description="Multi-resolution hierarchical masked-prediction speech encoder tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate deterministic synthetic WAV utterances")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--min-seconds", type=float, default=1.0)
    p.add_argument("--max-seconds", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("prepare-units", help="fit a codebook and write per-resolution unit files")
    _add_config_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--codebook-size", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", help="extract features with this model instead of a fresh seed model")
    p.set_defaults(func=cmd_prepare_units)

    p = sub.add_parser("pretrain", help="run masked-prediction pre-training")
    _add_config_args(p)
    p.add_argument("--manifest")
    p.add_argument("--units", help="directory produced by prepare-units")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--peak-lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-max-frames", type=int, default=0)
    p.add_argument("--checkpoint-interval", type=int, default=0)
    p.add_argument("--decay-shape", choices=("linear", "poly2"), default="linear")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("extract", help="write per-layer hidden states to a binary container")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--include-frontend", action="store_true",
                   help="also store the projected frontend features as the first state")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("profile", help="analytic multiply-accumulate and parameter profile")
    _add_config_args(p)
    p.add_argument("--durations", default="2,4,8,16,32")
    p.add_argument("--csv", help="write a machine-readable breakdown")
    p.add_argument("--figure", help="render the breakdown to a PNG")
    p.add_argument("--include-heads", action="store_true",
                   help="count the training-only prediction heads")
    p.add_argument("--include-attention", action="store_true",
                   help="count attention score/value matrix products")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("score", help="compute the benchmark score from metric values")
    p.add_argument("--metrics", required=True, help="CSV with metric,value rows")
    p.add_argument("--anchors", help="CSV with metric,task,fbank,sota,direction rows")
    p.add_argument("--tasks", choices=("understanding", "enhancement", "general"),
                   default="understanding")
    p.add_argument("--csv", help="write per-task normalized scores")
    p.add_argument("--figure", help="render per-task scores to a PNG")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("validate-config", help="report every violated configuration invariant")
    _add_config_args(p)
    p.set_defaults(func=cmd_validate_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MultiresError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
