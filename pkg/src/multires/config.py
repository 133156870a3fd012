"""Model configuration: domain types, validation, presets, serialization.

A configuration is immutable after construction.  The text format is a flat
`key = value` file; every key can also be overridden on the command line with
`--set key=value`.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace

from .errors import FormatError, InvalidResolutionError, UnknownPresetError

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class RateFactors:
    """Coprime (up, down) integer factors realizing a rational rate change."""

    up: int
    down: int


def reduced_fraction(r_high: int, r_low: int) -> RateFactors:
    """Reduce the (source_ms, target_ms) resolution pair to coprime rate factors.

    For the transition r_high -> r_low the result is interpreted as
    (upsample by `up`, then downsample by `down`).
    """
    if r_high <= 0 or r_low <= 0:
        raise InvalidResolutionError(f"resolutions must be positive, got ({r_high}, {r_low})")
    g = math.gcd(int(r_high), int(r_low))
    return RateFactors(int(r_high) // g, int(r_low) // g)


@dataclass(frozen=True)
class ConvExtractorSpec:
    """Strided convolution stack of the waveform frontend: (channels, kernel, stride) per layer."""

    layers: tuple[tuple[int, int, int], ...]

    @property
    def stride_product(self) -> int:
        p = 1
        for _, _, s in self.layers:
            p *= s
        return p

    @property
    def out_channels(self) -> int:
        return self.layers[-1][0]

    def frameshift_ms(self, sample_rate: int = SAMPLE_RATE) -> float:
        return 1000.0 * self.stride_product / sample_rate

    def min_samples(self) -> int:
        need = 1
        for ch, k, s in reversed(self.layers):
            need = k + s * (need - 1)
        return need


DEFAULT_EXTRACTOR = ConvExtractorSpec(
    layers=((512, 10, 5),) + ((512, 3, 2),) * 4 + ((512, 2, 2),) * 2)

TINY_EXTRACTOR = ConvExtractorSpec(
    layers=((16, 10, 5),) + ((16, 3, 2),) * 4 + ((16, 2, 2),) * 2)

GRAD_EXTRACTOR = ConvExtractorSpec(
    layers=((8, 10, 5),) + ((8, 3, 2),) * 4 + ((8, 2, 2),) * 2)


@dataclass(frozen=True)
class ModelConfig:
    """Complete architecture and pre-training configuration.

    `resolutions_ms` is ordered native-first (the frontend frameshift), then
    progressively coarser.  `layers_per_encoder` has 2N-1 entries for N
    resolutions, listed as: descent encoders (native resolution first), the
    bottleneck encoder, then ascent encoders listed native resolution first.
    `loss_weights` has one weight per resolution, in `resolutions_ms` order.
    """

    resolutions_ms: tuple[int, ...]
    layers_per_encoder: tuple[int, ...]
    attention_dim: int
    ffn_dim: int
    num_heads: int
    frontend: ConvExtractorSpec = DEFAULT_EXTRACTOR
    sampling_variant: str = "flexible"  # flexible | simple
    phi: float = 0.5
    mask_prob: float = 0.8
    mask_span: int = 10
    codebook_size: int = 1000
    loss_weights: tuple[float, ...] = (1.0, 1.0)
    audio_norm: bool = True
    dropout: float = 0.1
    seed: int = 0
    pre_conv_kernel: int = 128
    pre_conv_groups: int = 16
    final_encoder_pre_conv: bool = False
    mask_mode: str = "zero"  # zero | embedding
    mask_overlap_rule: str = "any"  # any | all

    @property
    def num_resolutions(self) -> int:
        return len(self.resolutions_ms)

    @property
    def num_encoders(self) -> int:
        return 2 * self.num_resolutions - 1

    def transition_factors(self) -> tuple[RateFactors, ...]:
        """Rate factors for each descent transition R_i -> R_{i+1}."""
        return tuple(reduced_fraction(self.resolutions_ms[i], self.resolutions_ms[i + 1])
                     for i in range(self.num_resolutions - 1))

    def encoder_layer_counts(self) -> tuple[int, ...]:
        """Layer counts in pipeline order (descent, bottleneck, ascent low-to-high).

        The configured list carries ascent entries native-resolution first, so
        the ascent slice is reversed to obtain execution order.
        """
        n = self.num_resolutions
        descent = self.layers_per_encoder[:n - 1]
        mid = self.layers_per_encoder[n - 1:n]
        ascent = self.layers_per_encoder[n:][::-1]
        return descent + mid + ascent

    def encoder_resolution_indices(self) -> tuple[int, ...]:
        """Resolution index (into resolutions_ms) per pipeline encoder."""
        n = self.num_resolutions
        return tuple(range(n)) + tuple(range(n - 2, -1, -1))


def validate(config: ModelConfig) -> list[str]:
    """Return every violated invariant (empty list means the config is valid)."""
    v: list[str] = []
    res = config.resolutions_ms
    if not res:
        v.append("resolutions_ms is empty")
    if any(r <= 0 for r in res):
        v.append(f"resolutions_ms entries must be positive: {res}")
    if res:
        native = config.frontend.frameshift_ms()
        if abs(res[0] - native) > 1e-9:
            v.append(f"first resolution {res[0]} ms != frontend frameshift {native:g} ms")
    n = len(res)
    if len(config.layers_per_encoder) != 2 * n - 1:
        v.append(f"layer allocation length {len(config.layers_per_encoder)} != 2N-1 = {2 * n - 1}")
    if any(x < 1 for x in config.layers_per_encoder):
        v.append(f"layer allocation entries must be >= 1: {config.layers_per_encoder}")
    if config.attention_dim <= 0:
        v.append("attention_dim must be positive")
    if config.num_heads <= 0:
        v.append("num_heads must be positive")
    elif config.attention_dim % config.num_heads:
        v.append(f"attention_dim {config.attention_dim} not divisible by num_heads {config.num_heads}")
    if config.ffn_dim <= 0:
        v.append("ffn_dim must be positive")
    if len(config.loss_weights) != n:
        v.append(f"loss_weights length {len(config.loss_weights)} != number of resolutions {n}")
    if any(w < 0 for w in config.loss_weights):
        v.append(f"loss_weights must be non-negative: {config.loss_weights}")
    if not 0.0 <= config.mask_prob <= 1.0:
        v.append(f"mask_prob {config.mask_prob} outside [0, 1]")
    if config.mask_span < 1:
        v.append(f"mask_span {config.mask_span} must be >= 1")
    if config.codebook_size < 1:
        v.append(f"codebook_size {config.codebook_size} must be >= 1")
    if not 0.0 <= config.dropout < 1.0:
        v.append(f"dropout {config.dropout} outside [0, 1)")
    if config.sampling_variant not in ("flexible", "simple"):
        v.append(f"sampling_variant {config.sampling_variant!r} not in (flexible, simple)")
    if config.mask_mode not in ("zero", "embedding"):
        v.append(f"mask_mode {config.mask_mode!r} not in (zero, embedding)")
    if config.mask_overlap_rule not in ("any", "all"):
        v.append(f"mask_overlap_rule {config.mask_overlap_rule!r} not in (any, all)")
    if config.pre_conv_kernel < 1:
        v.append("pre_conv_kernel must be >= 1")
    if config.pre_conv_groups < 1 or config.attention_dim % max(config.pre_conv_groups, 1):
        v.append(f"pre_conv_groups {config.pre_conv_groups} must divide attention_dim {config.attention_dim}")
    if config.seed < 0:
        v.append("seed must be non-negative")
    return v


def _base(**kw) -> ModelConfig:
    base = dict(resolutions_ms=(20, 40), layers_per_encoder=(4, 4, 4),
                attention_dim=768, ffn_dim=3072, num_heads=12,
                codebook_size=1000, loss_weights=(1.0, 1.0),
                mask_prob=0.8, mask_span=10, dropout=0.1, audio_norm=True)
    base.update(kw)
    return ModelConfig(**base)


def _large(**kw) -> ModelConfig:
    base = dict(attention_dim=1024, ffn_dim=4096, num_heads=16,
                layers_per_encoder=(8, 8, 8), dropout=0.0, audio_norm=False)
    base.update(kw)
    return _base(**base)


def _tiny(**kw) -> ModelConfig:
    # Loss weights average over the two resolutions so the combined loss of an
    # untrained model sits at ln(codebook_size); the wide positional kernel
    # lets the desk-scale model localize frames across masked spans.
    base = dict(resolutions_ms=(20, 40), layers_per_encoder=(1, 1, 1),
                attention_dim=32, ffn_dim=64, num_heads=4,
                frontend=TINY_EXTRACTOR, codebook_size=8,
                loss_weights=(0.5, 0.5), mask_prob=0.8, mask_span=10,
                dropout=0.0, audio_norm=True,
                pre_conv_kernel=63, pre_conv_groups=4)
    base.update(kw)
    return ModelConfig(**base)


_PRESET_BUILDERS = {
    # Two-resolution reference models and their single-resolution baselines.
    "mono-base": lambda: _base(),
    "mono-large": lambda: _large(),
    "hubert-base-equiv": lambda: _base(resolutions_ms=(20,), layers_per_encoder=(12,),
                                       loss_weights=(1.0,)),
    "hubert-large-equiv": lambda: _large(resolutions_ms=(20,), layers_per_encoder=(24,),
                                         loss_weights=(1.0,), audio_norm=True),
    # Layer-allocation ablations.
    "B.1-a": lambda: _base(layers_per_encoder=(2, 4, 6)),
    "B.1-b": lambda: _base(layers_per_encoder=(5, 2, 5)),
    "B.1-c": lambda: _base(layers_per_encoder=(6, 4, 2)),
    # Three-resolution ablations.
    "B.2-a": lambda: _base(resolutions_ms=(20, 40, 80), layers_per_encoder=(3, 2, 2, 2, 3),
                           loss_weights=(1.0, 1.0, 1.0)),
    "B.2-b": lambda: _base(resolutions_ms=(20, 40, 80), layers_per_encoder=(2, 2, 4, 2, 2),
                           loss_weights=(1.0, 1.0, 1.0)),
    "B.2-c": lambda: _base(resolutions_ms=(20, 40, 100), layers_per_encoder=(2, 2, 2, 2, 2),
                           loss_weights=(1.0, 1.0, 1.0)),
    # Simplified sampling / single target.
    "B.3-a": lambda: _base(sampling_variant="simple"),
    "B.4-a": lambda: _base(loss_weights=(1.0, 0.0)),
    "B.4-b": lambda: _base(sampling_variant="simple", loss_weights=(1.0, 0.0)),
    # Single effective resolution and compact models.
    "B.5-a": lambda: _base(resolutions_ms=(20, 20)),
    "B.6-a": lambda: _base(layers_per_encoder=(3, 3, 3)),
    "B.6-b": lambda: _base(resolutions_ms=(20, 20), layers_per_encoder=(3, 3, 3)),
    # Large-setting ablation architectures.
    "B.8-g": lambda: _large(layers_per_encoder=(10, 4, 10)),
    "B.8-i": lambda: _large(sampling_variant="simple"),
    # Desk-scale test configurations.
    "tiny": lambda: _tiny(),
    # Short mask spans keep masks non-empty on the ~12-frame sequences the
    # gradient suite uses.
    "tiny-grad": lambda: _tiny(attention_dim=8, ffn_dim=16, num_heads=2,
                               frontend=GRAD_EXTRACTOR, codebook_size=5,
                               mask_span=3, pre_conv_kernel=7, pre_conv_groups=2),
}

PRESET_NAMES = tuple(sorted(_PRESET_BUILDERS))

# Documented training defaults per preset (optimizer scale knobs only; the
# distributed-training settings of the reference runs are not modeled).
PRESET_TRAINING_DEFAULTS = {
    "default": dict(peak_lr=5e-4, warmup_steps=32000, max_steps=400000),
    "mono-large": dict(peak_lr=1.5e-3, warmup_steps=32000, max_steps=400000),
    "hubert-large-equiv": dict(peak_lr=1.5e-3, warmup_steps=32000, max_steps=400000),
    "B.8-g": dict(peak_lr=1.5e-3, warmup_steps=32000, max_steps=400000),
    "B.8-i": dict(peak_lr=1.5e-3, warmup_steps=32000, max_steps=400000),
    "tiny": dict(peak_lr=5e-3, warmup_steps=50, max_steps=200),
    "tiny-grad": dict(peak_lr=5e-3, warmup_steps=50, max_steps=200),
}


def preset(name: str) -> ModelConfig:
    try:
        builder = _PRESET_BUILDERS[name]
    except KeyError:
        raise UnknownPresetError(
            f"unknown preset {name!r}; valid presets: {', '.join(PRESET_NAMES)}") from None
    return builder()


def training_defaults(name: str) -> dict:
    return dict(PRESET_TRAINING_DEFAULTS.get(name, PRESET_TRAINING_DEFAULTS["default"]))


# ---------------------------------------------------------------------------
# Text serialization


def _fmt_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize(config: ModelConfig) -> str:
    lines = ["# multires model configuration v1"]
    for f in fields(config):
        value = getattr(config, f.name)
        if f.name == "frontend":
            enc = ", ".join(f"{c}:{k}:{s}" for c, k, s in value.layers)
            lines.append(f"frontend_layers = {enc}")
        else:
            lines.append(f"{f.name} = {_fmt_value(value)}")
    return "\n".join(lines) + "\n"


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    return tuple(int(x.strip()) for x in raw.split(",") if x.strip())


def _parse_float_tuple(raw: str) -> tuple[float, ...]:
    return tuple(float(x.strip()) for x in raw.split(",") if x.strip())


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise FormatError(f"expected a boolean, got {raw!r}")


def _parse_frontend(raw: str) -> ConvExtractorSpec:
    layers = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        bits = part.split(":")
        if len(bits) != 3:
            raise FormatError(f"frontend layer {part!r} must be channels:kernel:stride")
        layers.append(tuple(int(b) for b in bits))
    if not layers:
        raise FormatError("frontend_layers is empty")
    return ConvExtractorSpec(layers=tuple(layers))


_FIELD_PARSERS = {
    "resolutions_ms": _parse_int_tuple,
    "layers_per_encoder": _parse_int_tuple,
    "attention_dim": int,
    "ffn_dim": int,
    "num_heads": int,
    "frontend_layers": _parse_frontend,
    "sampling_variant": str.strip,
    "phi": float,
    "mask_prob": float,
    "mask_span": int,
    "codebook_size": int,
    "loss_weights": _parse_float_tuple,
    "audio_norm": _parse_bool,
    "dropout": float,
    "seed": int,
    "pre_conv_kernel": int,
    "pre_conv_groups": int,
    "final_encoder_pre_conv": _parse_bool,
    "mask_mode": str.strip,
    "mask_overlap_rule": str.strip,
}


def parse(text: str) -> ModelConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise FormatError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELD_PARSERS:
            raise FormatError(f"line {lineno}: unknown key {key!r}")
        try:
            parsed = _FIELD_PARSERS[key](raw.strip())
        except FormatError:
            raise
        except Exception as exc:
            raise FormatError(f"line {lineno}: cannot parse {key} from {raw.strip()!r}: {exc}") from exc
        values["frontend" if key == "frontend_layers" else key] = parsed
    required = ("resolutions_ms", "layers_per_encoder", "attention_dim", "ffn_dim", "num_heads")
    missing = [k for k in required if k not in values]
    if missing:
        raise FormatError(f"missing required keys: {', '.join(missing)}")
    return ModelConfig(**values)


def save(config: ModelConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(config))


def load(path: str) -> ModelConfig:
    resolved = resolve_config_path(path)
    with open(resolved, "r", encoding="utf-8") as fh:
        return parse(fh.read())


def resolve_config_path(path: str) -> str:
    """Resolve a config path, consulting $MULTIRES_CONFIG_DIR for relative names."""
    if os.path.isabs(path) or os.path.exists(path):
        return path
    base = os.environ.get("MULTIRES_CONFIG_DIR")
    if base:
        candidate = os.path.join(base, path)
        if os.path.exists(candidate):
            return candidate
    return path


def apply_overrides(config: ModelConfig, overrides: dict[str, str]) -> ModelConfig:
    """Apply `--set key=value` style overrides (values are unparsed strings)."""
    updates = {}
    for key, raw in overrides.items():
        if key not in _FIELD_PARSERS:
            raise FormatError(f"unknown config key {key!r}")
        parsed = _FIELD_PARSERS[key](raw)
        updates["frontend" if key == "frontend_layers" else key] = parsed
    return replace(config, **updates)
