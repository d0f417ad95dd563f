"""Dense feature-extractor networks with exact reverse-mode gradients.

Everything is plain float64 numpy.  A network is a list of affine layers,
each tagged with one activation: ``maxout2`` (two affine groups, take the
elementwise max), ``abs``, ``identity`` or ``leaky_relu``.  ``abs`` and
``identity`` are only allowed on the final layer.

Subgradient conventions are fixed for reproducibility: at a maxout tie the
first group wins; the derivative of ``abs`` at 0 is 0; ``leaky_relu`` uses
slope 1 at 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError, StateError

ACTIVATIONS = ("maxout2", "abs", "identity", "leaky_relu")
FINAL_ONLY = ("abs", "identity")


@dataclass
class Layer:
    """One affine stage.  For maxout2 `weight` is (2, out, in) and `bias` (2, out);
    otherwise (out, in) and (out,)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str
    slope: float = 0.2

    @property
    def out_dim(self) -> int:
        return self.weight.shape[-2]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[-1]


@dataclass
class FeatureNetwork:
    layers: list[Layer]
    version: int = 0

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise InputError(f"unknown activation {layer.activation!r}")
            if layer.activation in FINAL_ONLY and i != len(self.layers) - 1:
                raise InputError(f"{layer.activation} allowed only on the final layer")
            if layer.activation == "maxout2":
                if layer.weight.ndim != 3 or layer.weight.shape[0] != 2:
                    raise ShapeError("maxout2 layer needs weight of shape (2, out, in)")
            elif layer.weight.ndim != 2:
                raise ShapeError("affine layer needs weight of shape (out, in)")
            if i > 0 and layer.in_dim != self.layers[i - 1].out_dim:
                raise ShapeError(
                    f"layer {i} input dim {layer.in_dim} != previous output "
                    f"dim {self.layers[i - 1].out_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def bump(self) -> None:
        """Mark parameters as mutated; invalidates existing tapes."""
        self.version += 1

    def param_arrays(self) -> list[np.ndarray]:
        """Flat list of parameter arrays (views), weights then bias per layer."""
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def weight_arrays(self) -> list[np.ndarray]:
        return [layer.weight for layer in self.layers]

    def copy(self) -> "FeatureNetwork":
        return FeatureNetwork(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation, l.slope) for l in self.layers]
        )


@dataclass
class Tape:
    """Activation record produced by `forward`, consumed by `backward`."""

    net: FeatureNetwork
    version: int
    records: list[tuple]
    n_rows: int


@dataclass
class GradientBundle:
    """Per-parameter gradients mirroring the network layout, plus the
    gradient with respect to the input batch."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    input_grad: np.ndarray

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for dw, db in self.layers:
            out.append(dw)
            out.append(db)
        return out


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_feature_network(
    input_dim: int,
    output_dim: int,
    hidden_dim: int,
    n_layers: int,
    final_activation: str,
    rng: np.random.Generator,
) -> FeatureNetwork:
    """Maxout-2 hidden layers followed by one affine layer with
    `final_activation` ('abs' or 'identity')."""
    if n_layers < 1:
        raise InputError("need at least one layer")
    layers = []
    dims = [input_dim] + [hidden_dim] * (n_layers - 1) + [output_dim]
    for i in range(n_layers - 1):
        din, dout = dims[i], dims[i + 1]
        w = glorot_uniform(rng, din, dout, (2, dout, din))
        layers.append(Layer(w, np.zeros((2, dout)), "maxout2"))
    w = glorot_uniform(rng, dims[-2], dims[-1], (dims[-1], dims[-2]))
    layers.append(Layer(w, np.zeros(dims[-1]), final_activation))
    return FeatureNetwork(layers)


def forward(net: FeatureNetwork, batch: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Run the network on `batch` (n_samples, input_dim).

    Returns the output (n_samples, output_dim) and the tape needed for an
    exact backward pass.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise ShapeError(f"batch shape {batch.shape} incompatible with input dim {net.input_dim}")
    if not np.isfinite(batch).all():
        raise InputError("non-finite values in input batch")

    x = batch
    records = []
    for layer in net.layers:
        if layer.activation == "maxout2":
            z0 = x @ layer.weight[0].T + layer.bias[0]
            z1 = x @ layer.weight[1].T + layer.bias[1]
            take_first = z0 >= z1  # ties go to the first group
            out = np.where(take_first, z0, z1)
            records.append(("maxout2", x, take_first))
        else:
            z = x @ layer.weight.T + layer.bias
            if layer.activation == "abs":
                out = np.abs(z)
                records.append(("abs", x, np.sign(z)))
            elif layer.activation == "leaky_relu":
                dz = np.where(z >= 0.0, 1.0, layer.slope)
                out = np.where(z >= 0.0, z, layer.slope * z)
                records.append(("leaky_relu", x, dz))
            else:
                out = z
                records.append(("identity", x, None))
        x = out
    return x, Tape(net, net.version, records, batch.shape[0])


def backward(net: FeatureNetwork, tape: Tape, upstream: np.ndarray) -> GradientBundle:
    """Exact gradients of `sum(upstream * forward(net, batch))` with respect
    to every parameter and to the input batch."""
    if tape.net is not net or tape.version != net.version:
        raise StateError("tape is stale: network parameters changed since forward")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (tape.n_rows, net.output_dim):
        raise ShapeError(f"upstream shape {upstream.shape} != {(tape.n_rows, net.output_dim)}")

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    g = upstream
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        kind, x_in, aux = tape.records[i]
        if kind == "maxout2":
            g0 = np.where(aux, g, 0.0)
            g1 = np.where(aux, 0.0, g)
            dw = np.stack([g0.T @ x_in, g1.T @ x_in])
            db = np.stack([g0.sum(axis=0), g1.sum(axis=0)])
            g = g0 @ layer.weight[0] + g1 @ layer.weight[1]
        else:
            if kind == "abs" or kind == "leaky_relu":
                gz = g * aux
            else:
                gz = g
            dw = gz.T @ x_in
            db = gz.sum(axis=0)
            g = gz @ layer.weight
        grads[i] = (dw, db)
    return GradientBundle(grads, g)


@dataclass
class GradientCheckResult:
    max_rel_error: float
    n_checked: int
    kinks: list[tuple[int, int]] = field(default_factory=list)

    @property
    def has_kinks(self) -> bool:
        return len(self.kinks) > 0


def finite_difference_check(
    arrays: list[np.ndarray],
    loss_fn,
    h: float = 1e-6,
    kink_tol: float = 1e-3,
) -> GradientCheckResult:
    """Compare analytic gradients against central finite differences.

    `loss_fn()` must return (loss, grads) where grads is a list of arrays
    matching `arrays`; it is re-evaluated after in-place perturbation of
    each coordinate.  Coordinates where the two one-sided differences
    disagree (kinks of |.| or maxout ties) are reported and excluded from
    the error maximum instead of failing the check.
    """
    loss0, grads = loss_fn()
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    max_err = 0.0
    kinks = []
    n = 0
    for ai, arr in enumerate(arrays):
        flat = arr.reshape(-1)
        gflat = grads[ai].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            f_plus = loss_fn()[0]
            flat[j] = orig - h
            f_minus = loss_fn()[0]
            flat[j] = orig
            d_plus = (f_plus - loss0) / h
            d_minus = (loss0 - f_minus) / h
            if abs(d_plus - d_minus) > kink_tol * (1.0 + abs(d_plus) + abs(d_minus)):
                kinks.append((ai, j))
                continue
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(gflat[j] - numeric) / max(1.0, abs(numeric))
            if err > max_err:
                max_err = err
            n += 1
    return GradientCheckResult(max_err, n, kinks)


def gradient_check(net: FeatureNetwork, loss_fn, h: float = 1e-6) -> GradientCheckResult:
    """Finite-difference check of `loss_fn(net) -> (loss, GradientBundle)`
    over every network parameter."""

    def closure():
        loss, bundle = loss_fn(net)
        return loss, bundle.param_arrays()

    result = finite_difference_check(net.param_arrays(), closure, h=h)
    net.bump()  # parameters were touched in place during the sweep
    return result


# ---------------------------------------------------------------------------
# checkpoint documents

def network_to_document(net: FeatureNetwork) -> dict:
    layers = []
    for layer in net.layers:
        layers.append(
            {
                "activation": layer.activation,
                "slope": layer.slope,
                "weight_shape": list(layer.weight.shape),
                "weight": layer.weight.reshape(-1).tolist(),
                "bias_shape": list(layer.bias.shape),
                "bias": layer.bias.reshape(-1).tolist(),
            }
        )
    return {
        "type": "feature_network",
        "input_dim": net.input_dim,
        "output_dim": net.output_dim,
        "layers": layers,
    }


def network_from_document(doc: dict) -> FeatureNetwork:
    if doc.get("type") != "feature_network":
        raise InputError("document is not a feature_network checkpoint")
    layers = []
    for spec in doc["layers"]:
        w = np.array(spec["weight"], dtype=np.float64).reshape(spec["weight_shape"])
        b = np.array(spec["bias"], dtype=np.float64).reshape(spec["bias_shape"])
        layers.append(Layer(w, b, spec["activation"], spec["slope"]))
    return FeatureNetwork(layers)


def save_document(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_document(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
