"""Analytic cost model (multiply-accumulate counts, parameters) and the
benchmark score calculator.

Counting convention for MACs: convolutions, transposed convolutions, and
affine maps only.  Per output element a convolution costs in_ch/groups * k
and an affine costs in_dim; a transposed convolution costs k * in_ch * out_ch
per *input* element.  Attention Q/K/V/O projections and the FFN count as
affines over tokens; the attention score/value matrix products, norms, and
activations are excluded (an opt-in flag adds the attention products).
Prediction heads are training-only and excluded unless requested.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import ModelConfig, SAMPLE_RATE, validate
from .errors import DataError, ShapeError
from .frontend import output_length
from .model import param_count
from .sampling import ceil_div

DEFAULT_DURATIONS = (2, 4, 8, 16, 32)


@dataclass
class CostReport:
    config_durations_s: tuple[float, ...]
    per_module: dict[str, dict[float, int]]  # module -> duration -> exact MACs
    module_totals: dict[str, int]
    duration_totals: dict[float, int]
    grand_total: int
    params: dict[str, int]


def _sequence_lengths(config: ModelConfig, n_samples: int) -> list[int]:
    """Frame counts per resolution (native first) for one input length."""
    lengths = [output_length(n_samples, config.frontend)]
    for f in config.transition_factors():
        lengths.append(ceil_div(lengths[-1] * f.up, f.down))
    return lengths


def macs(config: ModelConfig, durations_s=DEFAULT_DURATIONS, include_heads: bool = False,
         include_attention_products: bool = False) -> CostReport:
    """Exact integer multiply-accumulate counts over a duration sweep."""
    problems = validate(config)
    if problems:
        raise ShapeError("invalid configuration: " + "; ".join(problems))
    durations = tuple(durations_s)
    if not durations or any(d <= 0 for d in durations):
        raise DataError(f"durations must be positive, got {durations}")
    d = config.attention_dim
    ffn = config.ffn_dim
    c_f = config.frontend.out_channels
    n = config.num_resolutions
    counts = config.encoder_layer_counts()
    res_idx = config.encoder_resolution_indices()
    factors = config.transition_factors()
    per_module: dict[str, dict[float, int]] = {}

    def add(module: str, duration: float, value: int):
        per_module.setdefault(module, {})[duration] = \
            per_module.setdefault(module, {}).get(duration, 0) + int(value)

    for dur in durations:
        n_samples = int(round(dur * SAMPLE_RATE))
        lengths = _sequence_lengths(config, n_samples)
        # Frontend conv stack.
        frontend_macs = 0
        lcur, cin = n_samples, 1
        for cout, k, s in config.frontend.layers:
            lcur = (lcur - k) // s + 1
            frontend_macs += lcur * cout * cin * k
            cin = cout
        add("frontend", dur, frontend_macs)
        add("input_proj", dur, lengths[0] * c_f * d)
        per_position_pre = d * (d // config.pre_conv_groups) * config.pre_conv_kernel
        add("pre_conv", dur, lengths[0] * per_position_pre)
        if config.final_encoder_pre_conv:
            add("pre_conv", dur, lengths[0] * per_position_pre)
        # Encoder stacks (pipeline order).
        per_token = 4 * d * d + 2 * d * ffn
        for j, (layers, ri) in enumerate(zip(counts, res_idx)):
            tokens = lengths[ri]
            value = layers * tokens * per_token
            if include_attention_products:
                value += layers * 2 * tokens * tokens * d
            add(f"encoder_{j + 1}", dur, value)
        # Sampling modules.
        for i, f in enumerate(factors):
            l_high, l_low = lengths[i], lengths[i + 1]
            flexible = config.sampling_variant == "flexible"
            down = 0
            if flexible:
                down += l_high * d * d                      # deconv (stride up)
            down += ceil_div(l_high * f.up, f.down) * d * d  # strided conv
            add(f"down_{i + 1}", dur, down)
            up = l_low * d * d                               # deconv (stride f.down)
            if flexible:
                up += ceil_div(l_low * f.down, f.up) * d * d
            add(f"up_{i + 1}", dur, up)
        if include_heads:
            head = sum(lengths[r] * d * config.codebook_size for r in range(n))
            add("heads", dur, head)

    module_totals = {m: sum(v.values()) for m, v in per_module.items()}
    duration_totals = {dur: sum(v.get(dur, 0) for v in per_module.values())
                       for dur in durations}
    return CostReport(config_durations_s=durations, per_module=per_module,
                      module_totals=module_totals, duration_totals=duration_totals,
                      grand_total=sum(module_totals.values()), params=param_count(config))


def giga(value: int) -> float:
    return value / 1e9


# ---------------------------------------------------------------------------
# Benchmark score


@dataclass(frozen=True)
class ScoreAnchor:
    metric: str
    task: str
    fbank: float
    sota: float
    higher_better: bool


def read_anchors(path: str) -> dict[str, ScoreAnchor]:
    anchors: dict[str, ScoreAnchor] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != ["metric", "task", "fbank", "sota", "direction"]:
            raise DataError(f"{path}: bad anchors header {header}")
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            metric, task, fbank, sota, direction = line.split(",")
            anchors[metric] = ScoreAnchor(metric, task, float(fbank), float(sota),
                                          direction.strip() == "higher")
    return anchors


def read_metrics_csv(path: str) -> dict[str, float]:
    metrics: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != ["metric", "value"]:
            raise DataError(f"{path}: bad metrics header {header}")
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            metric, value = line.split(",")
            metrics[metric.strip()] = float(value)
    return metrics


def task_grouping(anchors: dict[str, ScoreAnchor]) -> dict[str, list[str]]:
    groups: dict[str, list[str]] = {}
    for a in anchors.values():
        groups.setdefault(a.task, []).append(a.metric)
    return groups


UNDERSTANDING_TASKS = ("PR", "ASR", "IC", "KS", "SF", "ST")
ENHANCEMENT_TASKS = ("SE", "SS")


def superb_score(metrics: dict[str, float], anchors: dict[str, ScoreAnchor],
                 grouping: dict[str, list[str]]) -> float:
    """1000-scaled inter-task mean of per-metric linear normalizations.

    Per metric: (value - fbank) / (sota - fbank); metrics of a task are
    averaged first so multi-metric tasks do not dominate.
    """
    task_scores = []
    per_task = {}
    for task, metric_names in grouping.items():
        normalized = []
        for name in metric_names:
            if name not in anchors:
                raise DataError(f"no anchor for metric {name!r}")
            if name not in metrics:
                raise DataError(f"no value for metric {name!r}")
            a = anchors[name]
            if a.sota == a.fbank:
                raise DataError(f"degenerate anchors for metric {name!r}")
            normalized.append((metrics[name] - a.fbank) / (a.sota - a.fbank))
        per_task[task] = sum(normalized) / len(normalized)
        task_scores.append(per_task[task])
    return 1000.0 * sum(task_scores) / len(task_scores)


def category_grouping(anchors: dict[str, ScoreAnchor], category: str) -> dict[str, list[str]]:
    full = task_grouping(anchors)
    if category == "understanding":
        keep = UNDERSTANDING_TASKS
    elif category == "enhancement":
        keep = ENHANCEMENT_TASKS
    elif category == "general":
        keep = tuple(full)
    else:
        raise DataError(f"unknown category {category!r} "
                        "(choose understanding, enhancement, or general)")
    missing = [t for t in keep if t not in full]
    if missing:
        raise DataError(f"anchors file lacks tasks: {missing}")
    return {t: full[t] for t in keep}
