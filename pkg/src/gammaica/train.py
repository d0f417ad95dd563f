"""Adam optimization and the four contrastive training pipelines.

TCL / RTCL classify time-segment labels from features h(x) through a
per-segment linear head:  log r(x, u) = w_u . h(x) + b_u.  PCL / RPCL
classify true lag-1 pairs against permuted pairs through the component-wise
score  log r(x, u) = sum_i |a1_i h_i(x) + a2_i h_i(u) + b_i|
                     - (abar_i h_i(x) + bbar_i)^2 + c.

The robust variants (gamma > 0) are warm-started from a run of their
non-robust counterpart, as a guard against bad local optima.  The l2
penalty applies to weights only, never to biases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import LabeledSeries, make_pcl_pairs
from .errors import ConfigError, InputError, NumericalError
from .losses import BINARY, MULTICLASS, ContrastiveBatch, GammaLossSpec, gamma_binary_loss, gamma_multiclass_loss
from .numerics import FeatureNetwork, backward, forward, glorot_uniform, init_feature_network
from .rng import named_stream

METHODS = ("tcl", "rtcl", "pcl", "rpcl")


@dataclass
class RtclHead:
    weight: np.ndarray          # (K, d)
    bias: np.ndarray            # (K,)

    @property
    def n_segments(self) -> int:
        return self.weight.shape[0]

    def param_arrays(self):
        return [self.weight, self.bias]

    def weight_arrays(self):
        return [self.weight]

    def logits(self, h: np.ndarray) -> np.ndarray:
        return h @ self.weight.T + self.bias


@dataclass
class RpclHead:
    a1: np.ndarray              # (d,)
    a2: np.ndarray              # (d,)
    b: np.ndarray               # (d,)
    abar: np.ndarray            # (d,)
    bbar: np.ndarray            # (d,)
    c: np.ndarray               # (1,)

    @property
    def dim(self) -> int:
        return self.a1.shape[0]

    def param_arrays(self):
        return [self.a1, self.a2, self.b, self.abar, self.bbar, self.c]

    def weight_arrays(self):
        return [self.a1, self.a2, self.abar]

    def scores(self, h_x: np.ndarray, h_u: np.ndarray) -> np.ndarray:
        v = h_x * self.a1 + h_u * self.a2 + self.b
        w2 = h_x * self.abar + self.bbar
        return np.abs(v).sum(axis=1) - (w2 ** 2).sum(axis=1) + self.dim * self.c[0]


def init_rtcl_head(n_segments: int, dim: int, rng: np.random.Generator) -> RtclHead:
    return RtclHead(glorot_uniform(rng, dim, n_segments, (n_segments, dim)), np.zeros(n_segments))


def init_rpcl_head(dim: int, rng: np.random.Generator) -> RpclHead:
    return RpclHead(
        a1=rng.uniform(-1.0, 1.0, dim),
        a2=rng.uniform(-1.0, 1.0, dim),
        b=np.zeros(dim),
        abar=rng.uniform(-1.0, 1.0, dim),
        bbar=np.zeros(dim),
        c=np.zeros(1),
    )


@dataclass(frozen=True)
class TrainConfig:
    method: str
    gamma: float = 0.0
    learning_rate: float = 1e-3
    epochs: int = 400
    batch_size: int = 256
    l2: float = 1e-4
    warm_start_epochs: int = 0
    seed: int = 0
    hidden_factor: int = 4
    n_layers: int = 3
    refresh_negatives: bool = True
    cosine_decay: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("learning rate, epochs and batch size must be positive")
        if self.method in ("rtcl", "rpcl") and self.gamma <= 0.0:
            raise ConfigError(f"{self.method} requires gamma > 0")
        if self.l2 < 0 or self.warm_start_epochs < 0:
            raise ConfigError("l2 and warm_start_epochs must be nonnegative")


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def like(cls, params: list) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    state: AdamState,
    params: list,
    grads: list,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epshat: float = 1e-8,
) -> AdamState:
    """Standard bias-corrected Adam update, in place on `params`."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in parameter array {i} at step {state.t}")
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        mhat = state.m[i] / bc1
        vhat = state.v[i] / bc2
        p -= lr * mhat / (np.sqrt(vhat) + epshat)
    return state


# ---------------------------------------------------------------------------
# loss + full gradients for one batch

def tcl_loss_and_grads(net, head: RtclHead, x, labels, spec: GammaLossSpec, l2: float):
    """Segment-classification loss (gamma or exact CE) plus l2 on weights.

    Returns (loss, net GradientBundle, head gradient list)."""
    h, tape = forward(net, x)
    logits = head.logits(h)
    batch = ContrastiveBatch.multiclass(logits, labels)
    loss, dlogits = gamma_multiclass_loss(batch, spec)
    dw_head = dlogits.T @ h
    db_head = dlogits.sum(axis=0)
    dh = dlogits @ head.weight
    bundle = backward(net, tape, dh)
    loss += _l2_penalty_and_grads(l2, net, head, bundle, [dw_head, db_head])
    return loss, bundle, [dw_head, db_head]


def pcl_loss_and_grads(net, head: RpclHead, x_cur, u_pos, u_neg, spec: GammaLossSpec, l2: float):
    """Pair-classification loss (gamma or exact CE) plus l2 on weights.

    Positive pairs are (x_cur[t], u_pos[t]); negatives reuse x_cur against
    the permuted partners u_neg[t].  Returns (loss, net GradientBundle,
    head gradient list)."""
    n = x_cur.shape[0]
    stacked = np.concatenate([x_cur, u_pos, u_neg], axis=0)
    h, tape = forward(net, stacked)
    hx, hu_pos, hu_neg = h[:n], h[n:2 * n], h[2 * n:]

    v_pos = hx * head.a1 + hu_pos * head.a2 + head.b
    v_neg = hx * head.a1 + hu_neg * head.a2 + head.b
    w2 = hx * head.abar + head.bbar
    w2_term = (w2 ** 2).sum(axis=1)
    const = head.dim * head.c[0]
    z_pos = np.abs(v_pos).sum(axis=1) - w2_term + const
    z_neg = np.abs(v_neg).sum(axis=1) - w2_term + const

    batch = ContrastiveBatch.binary_pairs(z_pos, z_neg)
    loss, (dz_pos, dz_neg) = gamma_binary_loss(batch, spec)

    s_pos = np.sign(v_pos)
    s_neg = np.sign(v_neg)
    wp = dz_pos[:, None] * s_pos
    wn = dz_neg[:, None] * s_neg
    dz_sum = (dz_pos + dz_neg)[:, None]
    da1 = ((wp + wn) * hx).sum(axis=0)
    da2 = (wp * hu_pos + wn * hu_neg).sum(axis=0)
    db = (wp + wn).sum(axis=0)
    dabar = (dz_sum * (-2.0 * w2) * hx).sum(axis=0)
    dbbar = (dz_sum * (-2.0 * w2)).sum(axis=0)
    dc = np.array([head.dim * (dz_pos.sum() + dz_neg.sum())])

    dhx = (wp + wn) * head.a1 + dz_sum * (-2.0 * w2) * head.abar
    dhu_pos = wp * head.a2
    dhu_neg = wn * head.a2
    bundle = backward(net, tape, np.concatenate([dhx, dhu_pos, dhu_neg], axis=0))

    head_grads = [da1, da2, db, dabar, dbbar, dc]
    loss += _l2_penalty_and_grads(l2, net, head, bundle, head_grads)
    return loss, bundle, head_grads


def _l2_penalty_and_grads(l2, net, head, bundle, head_grads) -> float:
    """Add 2*l2*w to the weight gradients in place; return the penalty value."""
    if l2 == 0.0:
        return 0.0
    penalty = 0.0
    for layer, (dw, _) in zip(net.layers, bundle.layers):
        penalty += (layer.weight ** 2).sum()
        dw += 2.0 * l2 * layer.weight
    weight_ids = {id(a) for a in head.weight_arrays()}
    for p, g in zip(head.param_arrays(), head_grads):
        if id(p) in weight_ids:
            penalty += (p ** 2).sum()
            g += 2.0 * l2 * p
    return l2 * penalty


# ---------------------------------------------------------------------------
# training loops

@dataclass
class TrainResult:
    net: FeatureNetwork
    head: object
    trace: list                 # (epoch, mean loss, mean grad norm) per epoch
    accuracy: float
    config: TrainConfig
    warm_epochs_run: int = 0

    def features(self, x: np.ndarray) -> np.ndarray:
        return forward(self.net, x)[0]


def _grad_norm(arrays) -> float:
    return math.sqrt(sum(float((a ** 2).sum()) for a in arrays))


def _run_epochs(
    net,
    head,
    batch_loss,            # (indices) -> (loss, bundle, head_grads)
    n_items: int,
    config: TrainConfig,
    spec_label: str,
    n_epochs: int,
    mb_rng,
    trace: list,
    epoch_offset: int,
) -> None:
    params = net.param_arrays() + head.param_arrays()
    state = AdamState.like(params)
    for epoch in range(n_epochs):
        order = mb_rng.permutation(n_items)
        losses = []
        norms = []
        lr = config.learning_rate
        if config.cosine_decay and n_epochs > 1:
            lr *= 0.5 * (1.0 + math.cos(math.pi * epoch / (n_epochs - 1)))
        for start in range(0, n_items, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, bundle, head_grads = batch_loss(idx)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"{spec_label} loss diverged at epoch {epoch_offset + epoch}, "
                    f"batch {start // config.batch_size}"
                )
            grads = bundle.param_arrays() + head_grads
            adam_step(state, params, grads, lr)
            net.bump()
            losses.append(loss)
            norms.append(_grad_norm(grads))
        trace.append((epoch_offset + epoch, float(np.mean(losses)), float(np.mean(norms))))


def train_tcl_rtcl(data: LabeledSeries, config: TrainConfig) -> TrainResult:
    """Train TCL (exact CE) or RTCL (gamma-cross entropy, warm-started from
    a TCL phase) on segment-labeled data."""
    if config.method not in ("tcl", "rtcl"):
        raise ConfigError(f"train_tcl_rtcl got method {config.method!r}")
    if data.u is None:
        raise InputError("segment labels required for tcl/rtcl")

    d = data.dim
    n_seg = data.n_segments
    init_rng = named_stream(config.seed, "init")
    mb_rng = named_stream(config.seed, "minibatch")
    net = init_feature_network(d, d, config.hidden_factor * d, config.n_layers, "abs", init_rng)
    head = init_rtcl_head(n_seg, d, init_rng)

    x, labels = data.x, data.u
    spec_main = GammaLossSpec(config.gamma, MULTICLASS, n_classes=n_seg)

    def batch_loss_for(spec):
        def batch_loss(idx):
            return tcl_loss_and_grads(net, head, x[idx], labels[idx], spec, config.l2)
        return batch_loss

    trace: list = []
    warm = 0
    if config.method == "rtcl" and config.warm_start_epochs > 0:
        warm = config.warm_start_epochs
        spec_warm = GammaLossSpec(0.0, MULTICLASS, n_classes=n_seg)
        _run_epochs(net, head, batch_loss_for(spec_warm), data.n_samples, config,
                    "tcl-warm-start", warm, mb_rng, trace, 0)
    _run_epochs(net, head, batch_loss_for(spec_main), data.n_samples, config,
                config.method, config.epochs, mb_rng, trace, warm)

    h, _ = forward(net, x)
    accuracy = float((head.logits(h).argmax(axis=1) == labels).mean())
    return TrainResult(net, head, trace, accuracy, config, warm)


def train_pcl_rpcl(data: LabeledSeries, config: TrainConfig) -> TrainResult:
    """Train PCL (exact CE) or RPCL (gamma-cross entropy, warm-started from
    a PCL phase) on lag-1 pairs of the series."""
    if config.method not in ("pcl", "rpcl"):
        raise ConfigError(f"train_pcl_rpcl got method {config.method!r}")

    d = data.dim
    init_rng = named_stream(config.seed, "init")
    mb_rng = named_stream(config.seed, "minibatch")
    perm_rng = named_stream(config.seed, "permutation")
    net = init_feature_network(d, d, config.hidden_factor * d, config.n_layers, "identity", init_rng)
    head = init_rpcl_head(d, init_rng)

    pairs = make_pcl_pairs(data.x, config.seed)
    n = pairs.n_pairs
    x_cur, x_prev = pairs.x_cur, pairs.x_prev
    current_perm = pairs.perm.copy()
    spec_main = GammaLossSpec(config.gamma, BINARY)
    spec_warm = GammaLossSpec(0.0, BINARY)

    def batch_loss_for(spec):
        def batch_loss(idx):
            return pcl_loss_and_grads(
                net, head, x_cur[idx], x_prev[idx], x_prev[current_perm[idx]], spec, config.l2
            )
        return batch_loss

    trace: list = []

    def run_phase(spec, label, n_epochs, offset):
        nonlocal current_perm
        params = net.param_arrays() + head.param_arrays()
        state = AdamState.like(params)
        for epoch in range(n_epochs):
            if config.refresh_negatives and (epoch > 0 or offset > 0):
                current_perm = perm_rng.permutation(n)
            order = mb_rng.permutation(n)
            losses = []
            norms = []
            lr = config.learning_rate
            if config.cosine_decay and n_epochs > 1:
                lr *= 0.5 * (1.0 + math.cos(math.pi * epoch / (n_epochs - 1)))
            loss_fn = batch_loss_for(spec)
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                loss, bundle, head_grads = loss_fn(idx)
                if not np.isfinite(loss):
                    raise NumericalError(
                        f"{label} loss diverged at epoch {offset + epoch}, "
                        f"batch {start // config.batch_size}"
                    )
                grads = bundle.param_arrays() + head_grads
                adam_step(state, params, grads, lr)
                net.bump()
                losses.append(loss)
                norms.append(_grad_norm(grads))
            trace.append((offset + epoch, float(np.mean(losses)), float(np.mean(norms))))

    warm = 0
    if config.method == "rpcl" and config.warm_start_epochs > 0:
        warm = config.warm_start_epochs
        run_phase(spec_warm, "pcl-warm-start", warm, 0)
    run_phase(spec_main, config.method, config.epochs, warm)

    h_all, _ = forward(net, np.concatenate([x_cur, x_prev, x_prev[current_perm]], axis=0))
    hx, hp, hn = h_all[:n], h_all[n:2 * n], h_all[2 * n:]
    z_pos = head.scores(hx, hp)
    z_neg = head.scores(hx, hn)
    accuracy = float(0.5 * ((z_pos > 0).mean() + (z_neg < 0).mean()))
    return TrainResult(net, head, trace, accuracy, config, warm)


def train(data: LabeledSeries, config: TrainConfig) -> TrainResult:
    if config.method in ("tcl", "rtcl"):
        return train_tcl_rtcl(data, config)
    return train_pcl_rpcl(data, config)


# ---------------------------------------------------------------------------
# checkpoint documents and traces

def rtcl_head_to_document(head: RtclHead) -> dict:
    return {"type": "rtcl_head", "weight": head.weight.tolist(), "bias": head.bias.tolist()}


def rpcl_head_to_document(head: RpclHead) -> dict:
    return {
        "type": "rpcl_head",
        "a1": head.a1.tolist(),
        "a2": head.a2.tolist(),
        "b": head.b.tolist(),
        "abar": head.abar.tolist(),
        "bbar": head.bbar.tolist(),
        "c": head.c.tolist(),
    }


def head_from_document(doc: dict):
    if doc.get("type") == "rtcl_head":
        return RtclHead(np.array(doc["weight"], dtype=np.float64),
                        np.array(doc["bias"], dtype=np.float64))
    if doc.get("type") == "rpcl_head":
        return RpclHead(*(np.array(doc[k], dtype=np.float64)
                          for k in ("a1", "a2", "b", "abar", "bbar", "c")))
    raise ConfigError("document is not a head checkpoint")


def write_loss_trace(path, trace) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,grad_norm\n")
        for epoch, loss, norm in trace:
            fh.write(f"{epoch},{loss!r},{norm!r}\n")
