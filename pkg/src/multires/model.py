"""Full multi-resolution model: frontend, encoder stacks, samplers, heads.

The forward pass descends through progressively coarser resolutions, runs a
bottleneck encoder, and ascends back with residual connections: at each level
the upsampled lower output is added to the stored same-level descent output
before the ascent encoder runs.  Each resolution has a linear projection head
onto the unit vocabulary.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .audio import Waveform
from .config import ModelConfig, serialize, parse, validate
from .encoder import EncoderConfig, EncoderParams, encoder_forward
from .errors import EmptySequenceError, FormatError, ShapeError
from .frontend import FrontendParams, extract, output_length
from .masking import MaskSet, apply_mask, apply_mask_embedding, project_mask, sample_mask
from .sampling import SamplerParams, down_length, make_sampler, resample_forward

CHECKPOINT_MAGIC = b"MRCK"
CHECKPOINT_VERSION = 1


@dataclass
class TaggedState:
    name: str
    resolution_ms: int
    values: np.ndarray


@dataclass
class PretrainOutput:
    """Everything a training step needs from one forward pass."""

    logits_low_to_high: list[nm.Tensor]      # one per resolution, coarsest first
    resolution_order: list[int]              # resolution index per logits entry
    hidden_states: list[TaggedState]         # per-layer outputs plus sampler outputs
    mask_sets: list[MaskSet]                 # one per resolution, native first
    descent_outputs: list[nm.Tensor] = field(default_factory=list)
    sampler_outputs: list[nm.Tensor] = field(default_factory=list)

    def logits_for_resolution(self, res_index: int) -> nm.Tensor:
        return self.logits_low_to_high[self.resolution_order.index(res_index)]


class MultiResModel:
    def __init__(self, config: ModelConfig, dtype=np.float32):
        problems = validate(config)
        if problems:
            raise ShapeError("invalid configuration: " + "; ".join(problems))
        self.config = config
        self.dtype = dtype
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 0x1A17])))
        d = config.attention_dim
        c_f = config.frontend.out_channels

        self.frontend = FrontendParams(config.frontend, rng, dtype)
        self.feat_ln_g = nm.Parameter(np.ones(c_f, dtype=dtype), "feat_ln.gain")
        self.feat_ln_b = nm.Parameter(np.zeros(c_f, dtype=dtype), "feat_ln.bias")
        w = _trunc_normal(rng, (c_f, d), 0.02, dtype)
        self.proj_w = nm.Parameter(w, "input_proj.w")
        self.proj_b = nm.Parameter(np.zeros(d, dtype=dtype), "input_proj.b")
        self.mask_emb = None
        if config.mask_mode == "embedding":
            self.mask_emb = nm.Parameter(_trunc_normal(rng, (d,), 0.02, dtype), "mask_emb")

        n = config.num_resolutions
        counts = config.encoder_layer_counts()
        res_idx = config.encoder_resolution_indices()
        self.encoders: list[EncoderParams] = []
        for j, (layers, _) in enumerate(zip(counts, res_idx)):
            has_pre = j == 0 or (config.final_encoder_pre_conv and j == len(counts) - 1)
            cfg = EncoderConfig(num_layers=layers, dim=d, ffn_dim=config.ffn_dim,
                                heads=config.num_heads, has_pre_conv=has_pre,
                                pre_conv_kernel=config.pre_conv_kernel,
                                pre_conv_groups=config.pre_conv_groups,
                                dropout=config.dropout)
            self.encoders.append(EncoderParams(cfg, rng, dtype, f"enc{j + 1}"))

        factors = config.transition_factors()
        self.down_samplers: list[SamplerParams] = []
        self.up_samplers: list[SamplerParams] = []
        for i, f in enumerate(factors):
            self.down_samplers.append(make_sampler(
                d, f, "down", config.sampling_variant, config.phi, rng, dtype, f"down{i + 1}"))
        for i, f in enumerate(factors):
            self.up_samplers.append(make_sampler(
                d, f, "up", config.sampling_variant, config.phi, rng, dtype, f"up{i + 1}"))

        self.heads: list[tuple[nm.Parameter, nm.Parameter]] = []
        for i in range(n):
            hw = nm.Parameter(_trunc_normal(rng, (d, config.codebook_size), 0.02, dtype),
                              f"head{i}.w")
            hb = nm.Parameter(np.zeros(config.codebook_size, dtype=dtype), f"head{i}.b")
            self.heads.append((hw, hb))

        self._params: dict[str, nm.Parameter] = {}
        for p in self._collect_parameters():
            if p.name in self._params:
                raise ShapeError(f"duplicate parameter name {p.name}")
            self._params[p.name] = p

    def _collect_parameters(self) -> list[nm.Parameter]:
        ps = self.frontend.parameters()
        ps += [self.feat_ln_g, self.feat_ln_b, self.proj_w, self.proj_b]
        if self.mask_emb is not None:
            ps.append(self.mask_emb)
        for enc in self.encoders:
            ps += enc.parameters()
        for s in self.down_samplers + self.up_samplers:
            ps += s.parameters()
        for hw, hb in self.heads:
            ps += [hw, hb]
        return ps

    def parameters(self) -> dict[str, nm.Parameter]:
        return self._params

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    # ------------------------------------------------------------------
    # Forward passes

    def _frontend_features(self, waveform: Waveform) -> nm.Tensor:
        feats = extract(waveform, self.frontend, self.config.audio_norm)
        feats = nm.layer_norm(feats, self.feat_ln_g, self.feat_ln_b)
        return nm.affine(feats, self.proj_w, self.proj_b)

    def _run(self, x: nm.Tensor, rng: np.random.Generator | None,
             collect: bool) -> tuple[list[nm.Tensor], list[nm.Tensor], list[nm.Tensor],
                                     list[TaggedState]]:
        """Shared hourglass pass; returns (logits low->high, descent outs, sampler outs, states)."""
        cfg = self.config
        n = cfg.num_resolutions
        res_ms = cfg.resolutions_ms
        states: list[TaggedState] = []
        descent_outputs: list[nm.Tensor] = []
        sampler_outputs: list[nm.Tensor] = []

        def record_encoder(j: int, out_per_layer: list[nm.Tensor], res: int):
            if collect:
                for li, h in enumerate(out_per_layer):
                    states.append(TaggedState(f"enc{j + 1}.layer{li + 1}", res, h.data.copy()))

        # Descent.
        cur = x
        for level in range(n - 1):
            enc_out = encoder_forward(cur, self.encoders[level], rng)
            record_encoder(level, enc_out.per_layer, res_ms[level])
            descent_outputs.append(enc_out.final)
            down = resample_forward(enc_out.final, self.down_samplers[level])
            sampler_outputs.append(down)
            if collect:
                states.append(TaggedState(f"down{level + 1}", res_ms[level + 1], down.data.copy()))
            cur = down
        # Bottleneck.
        mid_index = n - 1
        enc_out = encoder_forward(cur, self.encoders[mid_index], rng)
        record_encoder(mid_index, enc_out.per_layer, res_ms[mid_index])
        logits: list[nm.Tensor] = [self._head(enc_out.final, mid_index)]
        cur = enc_out.final
        # Ascent.
        for level in range(n - 2, -1, -1):
            target = descent_outputs[level].shape[0]
            up = resample_forward(cur, self.up_samplers[level], target_len=target)
            sampler_outputs.append(up)
            if collect:
                states.append(TaggedState(f"up{level + 1}", res_ms[level], up.data.copy()))
            pipeline_index = n + (n - 2 - level)
            enc_out = encoder_forward(nm.add(up, descent_outputs[level]),
                                      self.encoders[pipeline_index], rng)
            record_encoder(pipeline_index, enc_out.per_layer, res_ms[level])
            logits.append(self._head(enc_out.final, level))
            cur = enc_out.final
        return logits, descent_outputs, sampler_outputs, states

    def _head(self, h: nm.Tensor, res_index: int) -> nm.Tensor:
        hw, hb = self.heads[res_index]
        return nm.affine(h, hw, hb)

    def forward_pretrain(self, waveform: Waveform, rng: np.random.Generator,
                         train_mode: bool = True,
                         collect_states: bool = False) -> PretrainOutput:
        cfg = self.config
        feats = self._frontend_features(waveform)
        length = feats.shape[0]
        if length < 1:
            raise EmptySequenceError("no frames produced by the frontend")
        mask = sample_mask(length, cfg.mask_prob, cfg.mask_span, rng,
                           resolution_ms=cfg.resolutions_ms[0])
        if cfg.mask_mode == "embedding":
            masked = apply_mask_embedding(feats, mask, self.mask_emb)
        else:
            masked = apply_mask(feats, mask)
        mask_sets = [mask]
        cur_len = length
        for i, f in enumerate(cfg.transition_factors()):
            cur_len = down_length(cur_len, f)
            mask_sets.append(project_mask(mask_sets[-1], f, cur_len,
                                          rule=cfg.mask_overlap_rule))
        drop_rng = rng if (train_mode and cfg.dropout > 0.0) else None
        logits, descent, samplers, states = self._run(masked, drop_rng, collect_states)
        n = cfg.num_resolutions
        order = [n - 1] + list(range(n - 2, -1, -1))
        return PretrainOutput(logits_low_to_high=logits, resolution_order=order,
                              hidden_states=states, mask_sets=mask_sets,
                              descent_outputs=descent, sampler_outputs=samplers)

    def extract_features(self, waveform: Waveform,
                         include_frontend: bool = False) -> list[TaggedState]:
        """All per-layer encoder outputs and sampler outputs, resolution-tagged.

        No masking and no dropout are applied.
        """
        feats = self._frontend_features(waveform)
        if feats.shape[0] < 1:
            raise EmptySequenceError("no frames produced by the frontend")
        _, _, _, states = self._run(feats, None, collect=True)
        if include_frontend:
            states = [TaggedState("frontend", self.config.resolutions_ms[0],
                                  feats.data.copy())] + states
        return states

    def frontend_feature_array(self, waveform: Waveform) -> np.ndarray:
        """Raw conv-stack features (before the model-side norm and projection)."""
        return extract(waveform, self.frontend, self.config.audio_norm).data

    def expected_logit_lengths(self, n_samples: int) -> list[int]:
        """Logit row counts per resolution (native first) for an input length."""
        length = output_length(n_samples, self.config.frontend)
        lengths = [length]
        for f in self.config.transition_factors():
            lengths.append(down_length(lengths[-1], f))
        return lengths


def _trunc_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    draw = rng.standard_normal(shape)
    for _ in range(8):
        bad = np.abs(draw) > 2.0
        if not bad.any():
            break
        draw[bad] = rng.standard_normal(int(bad.sum()))
    return (draw * std).astype(dtype)


# ---------------------------------------------------------------------------
# Parameter accounting (closed form; no model instantiation required)


def param_count(config: ModelConfig) -> dict[str, int]:
    """Exact learnable-scalar counts per submodule.

    Returns a dict with per-module entries plus "total" (all parameters) and
    "total_backbone" (excluding the prediction heads, i.e. the inference
    model).
    """
    d = config.attention_dim
    f = config.ffn_dim
    counts: dict[str, int] = {}
    frontend = 0
    cin = 1
    for cout, k, _ in config.frontend.layers:
        frontend += cout * cin * k
        cin = cout
    frontend += 2 * config.frontend.layers[0][0]  # first-layer group norm
    counts["frontend"] = frontend
    c_f = config.frontend.out_channels
    counts["input_proj"] = 2 * c_f + (c_f * d + d)  # feature norm + projection
    per_layer = 4 * (d * d + d) + 2 * (2 * d) + (d * f + f) + (f * d + d)
    pre_conv = d * (d // config.pre_conv_groups) * config.pre_conv_kernel + d + 2 * d
    counts["pre_conv"] = pre_conv * (2 if config.final_encoder_pre_conv else 1)
    encoders = 0
    for layers in config.encoder_layer_counts():
        encoders += layers * per_layer + 2 * d  # final norm per non-empty stack
    counts["encoders"] = encoders
    n = config.num_resolutions
    per_module = 2 * d * d if config.sampling_variant == "flexible" else d * d
    counts["samplers"] = 2 * (n - 1) * per_module
    counts["heads"] = n * (d * config.codebook_size + config.codebook_size)
    if config.mask_mode == "embedding":
        counts["mask_emb"] = d
    backbone = sum(v for k_, v in counts.items() if k_ != "heads")
    counts["total_backbone"] = backbone
    counts["total"] = backbone + counts["heads"]
    return counts


# ---------------------------------------------------------------------------
# Checkpoint container


def _write_blob(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    for extent in arr.shape:
        fh.write(struct.pack("<Q", extent))
    fh.write(arr.astype("<f4").tobytes())


def _read_blob(fh) -> tuple[str, np.ndarray]:
    raw = fh.read(4)
    if len(raw) != 4:
        raise FormatError("truncated checkpoint (blob header)")
    (name_len,) = struct.unpack("<I", raw)
    name = fh.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    payload = fh.read(count * 4)
    if len(payload) != count * 4:
        raise FormatError(f"truncated checkpoint payload for {name!r}")
    return name, np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def save_checkpoint(path: str, model: MultiResModel, step: int = 0,
                    optimizer_state: "dict | None" = None) -> None:
    """Versioned container: config echo, named f32 parameter blobs, optimizer moments."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        cfg_text = serialize(model.config).encode("utf-8")
        fh.write(struct.pack("<I", len(cfg_text)))
        fh.write(cfg_text)
        params = model.parameters()
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            _write_blob(fh, name, p.data)
        if optimizer_state is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Q", step))
            for name in params:
                _write_blob(fh, name, optimizer_state["m"][name])
            for name in params:
                _write_blob(fh, name, optimizer_state["v"][name])


def load_checkpoint(path: str) -> tuple[ModelConfig, dict[str, np.ndarray], int, "dict | None"]:
    """Returns (config, name->f32 values, step, optimizer state or None)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        config = parse(fh.read(cfg_len).decode("utf-8"))
        (n_params,) = struct.unpack("<I", fh.read(4))
        values: dict[str, np.ndarray] = {}
        for _ in range(n_params):
            name, arr = _read_blob(fh)
            values[name] = arr
        (has_opt,) = struct.unpack("<B", fh.read(1))
        step = 0
        opt = None
        if has_opt:
            (step,) = struct.unpack("<Q", fh.read(8))
            m: dict[str, np.ndarray] = {}
            v: dict[str, np.ndarray] = {}
            for _ in range(n_params):
                name, arr = _read_blob(fh)
                m[name] = arr
            for _ in range(n_params):
                name, arr = _read_blob(fh)
                v[name] = arr
            opt = {"m": m, "v": v}
    return config, values, step, opt


def restore_model(path: str, dtype=np.float32,
                  expect_config: ModelConfig | None = None) -> tuple[MultiResModel, int, "dict | None"]:
    """Rebuild a model from a checkpoint, rejecting config or shape mismatches."""
    config, values, step, opt = load_checkpoint(path)
    if expect_config is not None and expect_config != config:
        raise FormatError("checkpoint configuration does not match the requested configuration")
    model = MultiResModel(config, dtype=dtype)
    params = model.parameters()
    if set(params) != set(values):
        missing = set(params) ^ set(values)
        raise FormatError(f"checkpoint parameter names do not match the model: {sorted(missing)[:4]}")
    for name, p in params.items():
        if p.data.shape != values[name].shape:
            raise FormatError(
                f"checkpoint blob {name!r} has shape {values[name].shape}, model expects {p.data.shape}")
        p.data = values[name].astype(dtype)
        p.grad = np.zeros_like(p.data)
    return model, step, opt
