"""Deterministic pre-training loop: schedule, optimizer, checkpoints, metrics.

Determinism contract: (seed, data, config) fully determine every checkpoint
bit on one platform.  Per-step randomness (masks, dropout) is derived from
(seed, step) rather than a mutable stream, so resuming from a checkpoint
reproduces the uninterrupted run exactly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .audio import ManifestEntry, Waveform, read_manifest, read_wav
from .config import ModelConfig
from .errors import DataError, ShapeError
from .masking import MaskSet
from .model import MultiResModel, PretrainOutput, save_checkpoint
from .objective import LossBreakdown, multi_resolution_loss
from .quantizer import UnitSequence, read_unit_file


@dataclass
class TrainRunConfig:
    max_steps: int
    warmup_steps: int
    peak_lr: float
    seed: int
    out_dir: str
    manifest_path: str = ""
    unit_paths: tuple[str, ...] = ()
    batch_max_frames: int = 0  # 0 means exactly one utterance per step
    checkpoint_interval: int = 0  # 0 means final checkpoint only
    grad_clip: float = 10.0
    weight_decay: float = 0.01
    decay_shape: str = "linear"  # linear | poly2

    def __post_init__(self):
        if self.warmup_steps > self.max_steps:
            raise DataError(
                f"warmup_steps {self.warmup_steps} exceeds max_steps {self.max_steps}")


def lr_at(step: int, warmup: int, peak: float, max_steps: int, shape: str = "linear") -> float:
    """Linear ramp 0 -> peak over warmup, then decay peak -> 0 at max_steps."""
    if step <= 0:
        return 0.0
    if warmup > 0 and step <= warmup:
        return peak * step / warmup
    if max_steps <= warmup:
        return peak
    frac = (max_steps - step) / (max_steps - warmup)
    frac = max(frac, 0.0)
    if shape == "poly2":
        frac = frac * frac
    return peak * frac


class AdamWState:
    """Decoupled-weight-decay Adam moments, betas (0.9, 0.98), eps 1e-6."""

    def __init__(self, params: dict[str, nm.Parameter],
                 betas=(0.9, 0.98), eps=1e-6, weight_decay=0.01):
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def update(self, params: dict[str, nm.Parameter], lr: float) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= (lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                             + self.weight_decay * p.data)).astype(p.data.dtype)

    def as_dict(self) -> dict:
        return {"m": self.m, "v": self.v}

    def load(self, state: dict, step: int) -> None:
        for name in self.m:
            self.m[name] = state["m"][name].astype(self.m[name].dtype)
            self.v[name] = state["v"][name].astype(self.v[name].dtype)
        self.step_count = step


def clip_gradients(params: dict[str, nm.Parameter], max_norm: float) -> float:
    """Global-norm clipping; returns the pre-clip norm."""
    total = 0.0
    for p in params.values():
        total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            p.grad *= factor
    return norm


@dataclass
class TrainItem:
    entry: ManifestEntry
    waveform: Waveform
    targets: list[UnitSequence]  # one per resolution, native first


def _step_rng(seed: int, step: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, step, stream])))


def _align(pretrain: PretrainOutput, item: TrainItem, model: MultiResModel
           ) -> tuple[list[nm.Tensor], list[UnitSequence], list[MaskSet]]:
    """Reconcile logit and target lengths (at most one frame of slack)."""
    cfg = model.config
    logits_by_res = []
    targets_by_res = []
    masks_by_res = []
    for res_index in range(cfg.num_resolutions):
        logits = pretrain.logits_for_resolution(res_index)
        targets = item.targets[res_index]
        mask = pretrain.mask_sets[res_index]
        lh, lt = logits.shape[0], len(targets)
        if abs(lh - lt) > 1:
            raise DataError(
                f"utterance {item.entry.utt_id!r}: hidden length {lh} vs target length {lt} "
                f"at {cfg.resolutions_ms[res_index]} ms exceeds 1 frame of slack")
        n = min(lh, lt)
        if lh != n:
            logits = nm.slice_rows(logits, n)
        kept_targets = UnitSequence(targets.units[:n], targets.resolution_ms, targets.source_id)
        kept_mask = MaskSet(tuple(i for i in mask.indices if i < n), n, mask.resolution_ms)
        logits_by_res.append(logits)
        targets_by_res.append(kept_targets)
        masks_by_res.append(kept_mask)
    return logits_by_res, targets_by_res, masks_by_res


def train_step(model: MultiResModel, items: list[TrainItem], opt: AdamWState,
               run_cfg: TrainRunConfig, step: int) -> tuple[LossBreakdown, float, float]:
    """One optimizer step over a batch; returns (breakdown, grad norm, lr)."""
    cfg = model.config
    model.zero_grad()
    rows_acc: list[list] = []
    totals = []
    for b, item in enumerate(items):
        rng = _step_rng(run_cfg.seed, step, 2 * b)
        out = model.forward_pretrain(item.waveform, rng, train_mode=True)
        logits_by_res, targets_by_res, masks_by_res = _align(out, item, model)
        total, breakdown = multi_resolution_loss(
            logits_by_res, targets_by_res, masks_by_res, cfg.loss_weights, cfg.resolutions_ms)
        totals.append(total)
        rows_acc.append(breakdown.per_resolution)
    batch_loss = nm.weighted_sum_scalars(totals, [1.0 / len(items)] * len(items))
    nm.backward(batch_loss)
    grad_norm = clip_gradients(model.parameters(), run_cfg.grad_clip)
    lr = lr_at(step + 1, run_cfg.warmup_steps, run_cfg.peak_lr, run_cfg.max_steps,
               run_cfg.decay_shape)
    opt.update(model.parameters(), lr)
    merged = _merge_rows(rows_acc, cfg)
    breakdown = LossBreakdown(per_resolution=merged, total=float(batch_loss.data),
                              weights=tuple(float(w) for w in cfg.loss_weights))
    return breakdown, grad_norm, lr


def _merge_rows(rows_acc, cfg: ModelConfig):
    from .objective import ResolutionLoss

    merged = []
    for i, res in enumerate(cfg.resolutions_ms):
        losses = [rows[i].loss for rows in rows_acc]
        frames = [rows[i].masked_frames for rows in rows_acc]
        accs = [rows[i].masked_accuracy for rows in rows_acc]
        total_frames = sum(frames)
        if total_frames:
            acc = sum(a * f for a, f in zip(accs, frames)) / total_frames
        else:
            acc = 1.0
        merged.append(ResolutionLoss(
            resolution_ms=res, loss=sum(losses) / len(losses),
            masked_frames=total_frames, masked_accuracy=acc,
            vacuous=total_frames == 0))
    return merged


def load_training_data(model_config: ModelConfig, manifest_path: str,
                       unit_paths, check_lengths: bool = True) -> list[TrainItem]:
    entries = read_manifest(manifest_path)
    unit_paths = tuple(unit_paths)
    if len(unit_paths) != model_config.num_resolutions:
        raise DataError(
            f"expected {model_config.num_resolutions} unit files, got {len(unit_paths)}")
    per_res: list[list[UnitSequence]] = []
    for res, path in zip(model_config.resolutions_ms, unit_paths):
        if not os.path.exists(path):
            raise DataError(f"unit file missing: {path}")
        seqs = read_unit_file(path, res)
        if len(seqs) != len(entries):
            raise DataError(
                f"unit file {path} has {len(seqs)} lines for {len(entries)} utterances")
        per_res.append(seqs)
    items = []
    for i, entry in enumerate(entries):
        wav = read_wav(entry.path)
        targets = [per_res[r][i] for r in range(model_config.num_resolutions)]
        items.append(TrainItem(entry=entry, waveform=wav, targets=targets))
    return items


def build_batches(items: list[TrainItem], model: MultiResModel,
                  batch_max_frames: int) -> list[list[int]]:
    """Deterministic batch schedule (indices into items), cycled by step."""
    if batch_max_frames <= 0:
        return [[i] for i in range(len(items))]
    frames = [model.expected_logit_lengths(it.waveform.num_samples)[0] for it in items]
    longest = max(frames)
    if batch_max_frames < longest:
        raise DataError(
            f"batch_max_frames {batch_max_frames} below longest utterance ({longest} frames)")
    batches: list[list[int]] = []
    cur: list[int] = []
    used = 0
    for i, f in enumerate(frames):
        if cur and used + f > batch_max_frames:
            batches.append(cur)
            cur, used = [], 0
        cur.append(i)
        used += f
    if cur:
        batches.append(cur)
    return batches


METRICS_HEADER = ["step", "lr", "grad_norm", "loss_total"]


def _metrics_columns(config: ModelConfig) -> list[str]:
    cols = list(METRICS_HEADER)
    for res in config.resolutions_ms:
        cols += [f"loss_{res}ms", f"acc_{res}ms", f"masked_{res}ms"]
    return cols


def _metrics_line(step: int, lr: float, grad_norm: float, breakdown: LossBreakdown) -> str:
    parts = [str(step), f"{lr:.10e}", f"{grad_norm:.10e}", f"{breakdown.total:.10e}"]
    for row in breakdown.per_resolution:
        parts += [f"{row.loss:.10e}", f"{row.masked_accuracy:.10e}", str(row.masked_frames)]
    return "\t".join(parts)


def run(model: MultiResModel, run_cfg: TrainRunConfig,
        items: list[TrainItem] | None = None,
        resume_step: int = 0, resume_opt: dict | None = None) -> str:
    """Train for run_cfg.max_steps; returns the final checkpoint path.

    Writes checkpoint files and a tab-separated metrics log under out_dir.
    With resume_step > 0 the metrics log continues from that step in a fresh
    file (the checkpoint carries optimizer state).
    """
    os.makedirs(run_cfg.out_dir, exist_ok=True)
    if items is None:
        if run_cfg.max_steps > resume_step:
            items = load_training_data(model.config, run_cfg.manifest_path, run_cfg.unit_paths)
        else:
            items = []
    opt = AdamWState(model.parameters(), weight_decay=run_cfg.weight_decay)
    if resume_opt is not None:
        opt.load(resume_opt, resume_step)
    batches = build_batches(items, model, run_cfg.batch_max_frames) if items else []
    metrics_path = os.path.join(run_cfg.out_dir, "metrics.tsv")
    mode = "a" if resume_step > 0 and os.path.exists(metrics_path) else "w"
    with open(metrics_path, mode, encoding="utf-8") as log:
        if mode == "w":
            log.write("\t".join(_metrics_columns(model.config)) + "\n")
        for step in range(resume_step, run_cfg.max_steps):
            if not batches:
                raise DataError("no training data available for a non-zero-step run")
            batch = [items[i] for i in batches[step % len(batches)]]
            breakdown, grad_norm, lr = train_step(model, batch, opt, run_cfg, step)
            log.write(_metrics_line(step, lr, grad_norm, breakdown) + "\n")
            done = step + 1
            if run_cfg.checkpoint_interval and done % run_cfg.checkpoint_interval == 0 \
                    and done < run_cfg.max_steps:
                ck = os.path.join(run_cfg.out_dir, f"checkpoint_{done:06d}.bin")
                save_checkpoint(ck, model, step=done, optimizer_state=opt.as_dict())
    final_path = os.path.join(run_cfg.out_dir, "checkpoint_final.bin")
    save_checkpoint(final_path, model, step=run_cfg.max_steps, optimizer_state=opt.as_dict())
    return final_path
