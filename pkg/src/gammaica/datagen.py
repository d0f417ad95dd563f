"""Synthetic source generation, outlier contamination, and nonlinear mixing.

Sources come in two flavours: segment-wise Laplace with per-segment scales
(the multiclass/segment-label setting) and a first-order autoregressive
process with Laplace innovations (the paired/lagged setting).  Outliers
replace whole samples at rate eps.  Observations are produced by an
invertible random leaky-ReLU network whose parameters are recorded so the
mixing can be inverted exactly in tests.

All draws flow through named Philox streams, so e.g. switching
contamination on or off never changes the source or mixing draws.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, GenerationError, InputError
from .numerics import (
    FeatureNetwork,
    Layer,
    forward,
    network_from_document,
    network_to_document,
)
from .rng import named_stream

LAPLACE = "laplace"
MODULATED_GAUSS = "modulated-gauss-mixture"
REPLACEMENT_LAPLACE = "replacement-laplace"
FAMILIES = (LAPLACE, MODULATED_GAUSS, REPLACEMENT_LAPLACE)


def _jsonify(obj):
    """Canonical JSON form (tuples become lists) so provenance compares
    equal across save/load round trips."""
    return json.loads(json.dumps(obj))

MIXING_SLOPE = 0.2
MIXING_COND_CAP = 1e3


@dataclass(frozen=True)
class SegmentedSourceSpec:
    dim: int
    n_segments: int
    segment_length: int
    scale_range: tuple[float, float] = (1e-3, 2.0 ** -0.5)
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.n_segments < 2 or self.segment_length < 1:
            raise ConfigError("need dim >= 1, n_segments >= 2, segment_length >= 1")
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi):
            raise ConfigError("scale_range must be within (0, inf)")


@dataclass(frozen=True)
class ArSourceSpec:
    dim: int
    length: int
    rho: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.length < 2:
            raise ConfigError("need dim >= 1 and length >= 2")
        if not abs(self.rho) < 1.0:
            raise ConfigError("|rho| must be < 1 for stationarity")


@dataclass(frozen=True)
class ContaminationSpec:
    eps: float
    family: str = LAPLACE
    scale: float = 3.0
    mean_ranges: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 4.0), (-4.0, -1.0))
    sd: float = 0.5
    weights: tuple[float, float] = (0.5, 0.5)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.eps < 1.0:
            raise ConfigError(f"eps must be in [0, 1), got {self.eps}")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown contamination family {self.family!r}")
        if self.scale <= 0 or self.sd <= 0:
            raise ConfigError("scale and sd must be positive")


@dataclass
class LabeledSeries:
    """Observations plus everything needed to train and evaluate on them."""

    x: np.ndarray                      # (T, dx) observed
    u: np.ndarray | None               # (T,) int segment labels, or None (lagged aux)
    s_clean: np.ndarray                # (T, dx) sources before contamination
    outlier_mask: np.ndarray           # (T,) bool, True where the sample was replaced
    mixing: FeatureNetwork | None = None
    provenance: dict | None = None

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def n_segments(self) -> int:
        if self.u is None:
            raise InputError("series has no segment labels")
        return int(self.u.max()) + 1


def gen_segmented_sources(spec: SegmentedSourceSpec):
    """Per-segment Laplace sources.

    Segment k draws scales scale[k, j] ~ Uniform(scale_range) once, then
    emits segment_length iid Laplace(0, scale[k, j]) samples per component.
    Returns (sources (T, d), labels (T,), scales (K, d)); labels are the
    0-based segment indices in contiguous equal blocks.
    """
    rng = named_stream(spec.seed, "sources")
    lo, hi = spec.scale_range
    scales = rng.uniform(lo, hi, size=(spec.n_segments, spec.dim))
    labels = np.repeat(np.arange(spec.n_segments), spec.segment_length)
    raw = rng.laplace(0.0, 1.0, size=(labels.size, spec.dim))
    return raw * scales[labels], labels, scales


def gen_ar_sources(spec: ArSourceSpec) -> np.ndarray:
    """AR(1) sources s(t) = rho s(t-1) + Laplace(0, 1), burned in 1000 steps."""
    rng = named_stream(spec.seed, "sources")
    burn = 1000
    innovations = rng.laplace(0.0, 1.0, size=(spec.length + burn, spec.dim))
    series = lfilter([1.0], [1.0, -spec.rho], innovations, axis=0)
    return series[burn:]


def contaminate(sources: np.ndarray, labels: np.ndarray | None, spec: ContaminationSpec):
    """Replace each sample with probability eps by a draw from the outlier
    family.  Returns (contaminated copy, mask of replaced samples)."""
    n, d = sources.shape
    rng = named_stream(spec.seed, "outliers")
    out = sources.copy()
    mask = rng.random(n) < spec.eps
    if spec.eps == 0.0 or not mask.any():
        return out, np.zeros(n, dtype=bool)

    k = int(mask.sum())
    if spec.family in (LAPLACE, REPLACEMENT_LAPLACE):
        out[mask] = rng.laplace(0.0, spec.scale, size=(k, d))
    else:  # modulated-gauss-mixture
        if labels is None:
            raise ConfigError("modulated-gauss-mixture requires segment labels")
        n_seg = int(labels.max()) + 1
        (lo1, hi1), (lo2, hi2) = spec.mean_ranges
        means_hi = rng.uniform(lo1, hi1, size=(n_seg, d))
        means_lo = rng.uniform(lo2, hi2, size=(n_seg, d))
        pick_hi = rng.random((k, d)) < spec.weights[0]
        seg = labels[mask]
        centers = np.where(pick_hi, means_hi[seg], means_lo[seg])
        out[mask] = centers + rng.normal(0.0, spec.sd, size=(k, d))
    return out, mask


def mix_nonlinear(sources: np.ndarray, n_layers: int, seed: int):
    """Observations x = f(s) through `n_layers` random square affine maps,
    each followed by leaky-ReLU(0.2).  Layer weights with condition number
    above 1e3 are resampled, which keeps f invertible.

    Returns (x, mixing network)."""
    if n_layers < 1:
        raise InputError("need at least one mixing layer")
    d = sources.shape[1]
    rng = named_stream(seed, "mixing")
    layers = []
    for _ in range(n_layers):
        for attempt in range(100):
            w = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
            if np.linalg.cond(w) <= MIXING_COND_CAP:
                break
        else:
            raise GenerationError("could not sample a well-conditioned mixing layer")
        layers.append(Layer(w, np.zeros(d), "leaky_relu", MIXING_SLOPE))
    net = FeatureNetwork(layers)
    x, _ = forward(net, sources)
    return x, net


def invert_mixing(net: FeatureNetwork, x: np.ndarray) -> np.ndarray:
    """Exact inverse of a mixing network (affine + leaky-ReLU layers)."""
    out = np.asarray(x, dtype=np.float64)
    for layer in reversed(net.layers):
        if layer.activation != "leaky_relu":
            raise InputError("only leaky-ReLU mixing networks are invertible here")
        z = np.where(out >= 0.0, out, out / layer.slope)
        out = np.linalg.solve(layer.weight, (z - layer.bias).T).T
    return out


@dataclass
class PclPairs:
    """Positive pairs (x(t), x(t-1)) and one permutation for negatives."""

    x_cur: np.ndarray
    x_prev: np.ndarray
    perm: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.x_cur.shape[0]

    def negatives_prev(self) -> np.ndarray:
        return self.x_prev[self.perm]


def make_pcl_pairs(x: np.ndarray, seed: int) -> PclPairs:
    """Lag-1 positive pairs plus a seeded permutation of the lagged entries
    for the negative class."""
    if x.shape[0] < 2:
        raise InputError("need at least two samples to form pairs")
    rng = named_stream(seed, "permutation")
    perm = rng.permutation(x.shape[0] - 1)
    return PclPairs(x[1:], x[:-1], perm)


# ---------------------------------------------------------------------------
# end-to-end generation

def make_segmented_series(
    source_spec: SegmentedSourceSpec,
    contamination: ContaminationSpec | None,
    mixing_layers: int = 3,
    mixing_seed: int | None = None,
) -> LabeledSeries:
    """Generate -> contaminate -> mix for the segment-label setting."""
    s, labels, scales = gen_segmented_sources(source_spec)
    if contamination is not None:
        s_obs, mask = contaminate(s, labels, contamination)
    else:
        s_obs, mask = s.copy(), np.zeros(s.shape[0], dtype=bool)
    seed = source_spec.seed if mixing_seed is None else mixing_seed
    x, net = mix_nonlinear(s_obs, mixing_layers, seed)
    return LabeledSeries(
        x=x,
        u=labels,
        s_clean=s,
        outlier_mask=mask,
        mixing=net,
        provenance=_jsonify({
            "kind": "segmented",
            "source_spec": dataclasses.asdict(source_spec),
            "contamination": dataclasses.asdict(contamination) if contamination else None,
            "mixing_layers": mixing_layers,
            "mixing_seed": seed,
            "segment_scales": scales.tolist(),
        }),
    )


def make_ar_series(
    source_spec: ArSourceSpec,
    contamination: ContaminationSpec | None,
    mixing_layers: int = 3,
    mixing_seed: int | None = None,
) -> LabeledSeries:
    """Generate -> contaminate -> mix for the lagged-auxiliary setting."""
    s = gen_ar_sources(source_spec)
    if contamination is not None:
        s_obs, mask = contaminate(s, None, contamination)
    else:
        s_obs, mask = s.copy(), np.zeros(s.shape[0], dtype=bool)
    seed = source_spec.seed if mixing_seed is None else mixing_seed
    x, net = mix_nonlinear(s_obs, mixing_layers, seed)
    return LabeledSeries(
        x=x,
        u=None,
        s_clean=s,
        outlier_mask=mask,
        mixing=net,
        provenance=_jsonify({
            "kind": "ar",
            "source_spec": dataclasses.asdict(source_spec),
            "contamination": dataclasses.asdict(contamination) if contamination else None,
            "mixing_layers": mixing_layers,
            "mixing_seed": seed,
        }),
    )


# ---------------------------------------------------------------------------
# dataset container format: one json header + flat binary arrays

def save_series(path, series: LabeledSeries) -> None:
    header = {
        "format": "gammaica-series-v1",
        "n_samples": int(series.n_samples),
        "dim": int(series.dim),
        "has_labels": series.u is not None,
        "provenance": series.provenance,
        "mixing": network_to_document(series.mixing) if series.mixing is not None else None,
    }
    arrays = {
        "x": series.x,
        "s_clean": series.s_clean,
        "outlier_mask": series.outlier_mask,
        "header": np.array(json.dumps(header, sort_keys=True)),
    }
    if series.u is not None:
        arrays["u"] = series.u
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_series(path) -> LabeledSeries:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != "gammaica-series-v1":
            raise InputError(f"{path} is not a gammaica series file")
        mixing = network_from_document(header["mixing"]) if header["mixing"] else None
        return LabeledSeries(
            x=data["x"],
            u=data["u"] if header["has_labels"] else None,
            s_clean=data["s_clean"],
            outlier_mask=data["outlier_mask"],
            mixing=mixing,
            provenance=header["provenance"],
        )
