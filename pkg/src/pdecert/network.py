"""Dense feed-forward networks: evaluation, exact gradients, weight files, fixtures."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")


class WeightFileError(ValueError):
    """Raised when a weight file cannot be parsed into a network."""


@dataclass(frozen=True, eq=False)
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True, eq=False)
class Network:
    """A stack of affine layers, each followed by an elementwise activation.

    Weights are stored as read-only float64 arrays so a network can be shared
    between workers without copying.
    """

    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = []
        for k, layer in enumerate(self.layers):
            W = np.array(layer.W, dtype=np.float64, ndmin=2)
            b = np.array(layer.b, dtype=np.float64).reshape(-1)
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {k}: unknown activation {layer.activation!r}")
            if b.shape[0] != W.shape[0]:
                raise ValueError(f"layer {k}: bias length {b.shape[0]} != rows {W.shape[0]}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k}: non-finite weights")
            W.flags.writeable = False
            b.flags.writeable = False
            layers.append(Layer(W, b, layer.activation))
        if not layers:
            raise ValueError("network needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].in_dim != layers[k - 1].out_dim:
                raise ValueError(
                    f"dimension chain broken between layer {k - 1} "
                    f"(out {layers[k - 1].out_dim}) and layer {k} (in {layers[k].in_dim})"
                )
        if layers[-1].activation != "identity":
            raise ValueError("last layer activation must be identity")
        object.__setattr__(self, "layers", tuple(layers))

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def arch(self) -> list[int]:
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    def __call__(self, x):
        return evaluate(self, x)


def _act(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_deriv(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if kind == "relu":
        # subgradient 0 at exactly 0
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def evaluate(net: Network, x) -> np.ndarray:
    """Forward pass. ``x`` is a single point (d,) or a batch (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = np.atleast_2d(x)
    if a.shape[1] != net.input_dim:
        raise ValueError(f"expected input of dimension {net.input_dim}, got {a.shape[1]}")
    for layer in net.layers:
        a = _act(layer.activation, a @ layer.W.T + layer.b)
    return a[0] if single else a


def pre_activations(net: Network, x) -> list[np.ndarray]:
    """Pre-activation values of every layer for a batch of points."""
    a = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = []
    for layer in net.layers:
        z = a @ layer.W.T + layer.b
        out.append(z)
        a = _act(layer.activation, z)
    return out


def jacobian(net: Network, x) -> np.ndarray:
    """Exact Jacobian d(output)/d(input).

    Returns (output_dim, input_dim) for a single point and
    (n, output_dim, input_dim) for a batch.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    zs = pre_activations(net, x)
    n = zs[0].shape[0]
    J = np.broadcast_to(np.eye(net.output_dim), (n, net.output_dim, net.output_dim))
    for layer, z in zip(reversed(net.layers), reversed(zs)):
        J = J * _act_deriv(layer.activation, z)[:, None, :]
        J = J @ layer.W
    return J[0] if single else J


# --- weight files -----------------------------------------------------------


def to_dict(net: Network) -> dict:
    return {
        "arch": net.arch,
        "activations": [layer.activation for layer in net.layers],
        "layers": [{"W": layer.W.tolist(), "b": layer.b.tolist()} for layer in net.layers],
    }


def dumps(net: Network) -> str:
    # float repr is the shortest string that round-trips a float64 exactly
    return json.dumps(to_dict(net), indent=1) + "\n"


def from_dict(data) -> Network:
    if not isinstance(data, dict):
        raise WeightFileError("top level must be a JSON object")
    for key in ("arch", "activations", "layers"):
        if key not in data:
            raise WeightFileError(f"missing field {key!r}")
    arch, acts, raw = data["arch"], data["activations"], data["layers"]
    if not isinstance(arch, list) or not all(isinstance(a, int) and a > 0 for a in arch):
        raise WeightFileError("field 'arch' must be a list of positive integers")
    if not isinstance(raw, list) or not isinstance(acts, list):
        raise WeightFileError("fields 'layers' and 'activations' must be lists")
    if len(acts) != len(raw):
        raise WeightFileError(f"field 'activations' has {len(acts)} entries for {len(raw)} layers")
    if len(arch) != len(raw) + 1:
        raise WeightFileError(f"field 'arch' has {len(arch)} entries for {len(raw)} layers")
    layers = []
    for k, (entry, act) in enumerate(zip(raw, acts)):
        if not isinstance(entry, dict) or "W" not in entry or "b" not in entry:
            raise WeightFileError(f"field 'layers[{k}]' must be an object with 'W' and 'b'")
        try:
            W = np.array(entry["W"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise WeightFileError(f"field 'layers[{k}].W' is not a numeric matrix") from exc
        try:
            b = np.array(entry["b"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise WeightFileError(f"field 'layers[{k}].b' is not a numeric vector") from exc
        if W.ndim != 2:
            raise WeightFileError(f"field 'layers[{k}].W' must be 2-D")
        if b.ndim != 1:
            raise WeightFileError(f"field 'layers[{k}].b' must be 1-D")
        if act not in ACTIVATIONS:
            raise WeightFileError(f"field 'activations[{k}]' has unknown value {act!r}")
        if W.shape != (arch[k + 1], arch[k]):
            raise ValueError(
                f"dimension chain broken: layers[{k}].W has shape {W.shape}, "
                f"arch implies {(arch[k + 1], arch[k])}"
            )
        layers.append(Layer(W, b, act))
    return Network(tuple(layers))


def load_network(path) -> Network:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WeightFileError(f"invalid JSON: {exc}") from exc
    return from_dict(data)


def store_network(net: Network, path) -> None:
    Path(path).write_text(dumps(net), encoding="utf-8")


def network_hash(net: Network) -> str:
    return hashlib.sha256(dumps(net).encode("utf-8")).hexdigest()


# --- fixtures ---------------------------------------------------------------


def generate_fixture(seed: int, arch, activation: str = "tanh") -> Network:
    """Deterministic network with weights uniform in +-1/sqrt(fan_in).

    Uses numpy's PCG64 generator (``np.random.default_rng(seed)``); layers are
    drawn in order, W before b. Hidden layers use ``activation``, the output
    layer is linear.
    """
    arch = [int(a) for a in arch]
    if len(arch) < 2:
        raise ValueError("arch needs at least an input and an output size")
    rng = np.random.default_rng(seed)
    layers = []
    for k in range(len(arch) - 1):
        fan_in, fan_out = arch[k], arch[k + 1]
        scale = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-scale, scale, size=(fan_out, fan_in))
        b = rng.uniform(-scale, scale, size=fan_out)
        act = "identity" if k == len(arch) - 2 else activation
        layers.append(Layer(W, b, act))
    return Network(tuple(layers))


def affine_network(W, b) -> Network:
    """Single identity layer computing W x + b."""
    return Network((Layer(np.atleast_2d(W), np.atleast_1d(b), "identity"),))


def zero_network(input_dim: int, output_dim: int) -> Network:
    return affine_network(np.zeros((output_dim, input_dim)), np.zeros(output_dim))


def viscous_shock_network(nu: float = 0.01 / np.pi) -> Network:
    """2-1-1 tanh network u(x, t) = -tanh(x / (2 nu)).

    This is an exact steady solution of u_t + u u_x = nu u_xx with a shock
    of width ~nu at x = 0, so its finite-difference residual is pure
    truncation error concentrated along the shock.
    """
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    return Network((
        Layer(np.array([[1.0 / (2.0 * nu), 0.0]]), np.zeros(1), "tanh"),
        Layer(np.array([[-1.0]]), np.zeros(1), "identity"),
    ))
