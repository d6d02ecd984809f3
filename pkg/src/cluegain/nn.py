"""Small dense feedforward networks in numpy.

Networks are lists of ``Layer`` objects computing ``act(x @ W + b)`` on row
batches. Backpropagation, Adam and the layer surgery needed for transfer
(extracting hidden layers, rebuilding input/output layers around them) live
here as module-level functions.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, InputError, InternalError

ACTIVATIONS = ("relu", "sigmoid", "identity")

FORMAT_MAGIC = b"CGNN"
FORMAT_VERSION = 1


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0, out=z)
    if activation == "sigmoid":
        return expit(z, out=z)
    return z


def _activation_grad(a: np.ndarray, activation: str) -> np.ndarray:
    """Derivative of the activation expressed through its output ``a``."""
    if activation == "relu":
        return (a > 0.0).astype(a.dtype)
    if activation == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(a)


@dataclass(eq=False)
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"
    frozen: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ConfigurationError(
                f"weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "Layer":
        return Layer(self.weights.copy(), self.bias.copy(), self.activation, self.frozen)


@dataclass(eq=False)
class Network:
    layers: List[Layer]
    # bumped by every optimizer step; forward caches remember it
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("a network needs at least one layer")
        _check_chain(self.layers)
        # parameters live in one flat buffer; layer arrays become views into it
        self._flat = np.empty(sum(l.weights.size + l.bias.size for l in self.layers))
        self._frozen_key = None
        for layer, (w, b) in zip(self.layers, _param_views(self._flat, self.layers)):
            w[...] = layer.weights
            b[...] = layer.bias
            layer.weights, layer.bias = w, b

    @property
    def parameters(self) -> np.ndarray:
        """All parameters as one flat vector (a view, not a copy)."""
        return self._flat

    def trainable_mask(self) -> np.ndarray:
        """1.0 for every parameter of a trainable layer, 0.0 for frozen ones."""
        key = tuple(layer.frozen for layer in self.layers)
        if key != self._frozen_key:
            sizes = [l.weights.size + l.bias.size for l in self.layers]
            self._trainable = np.repeat([0.0 if f else 1.0 for f in key], sizes)
            self._frozen_key = key
        return self._trainable

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def widths(self) -> List[int]:
        return [self.input_dim] + [layer.fan_out for layer in self.layers]

    def copy(self) -> "Network":
        return Network([layer.copy() for layer in self.layers])

    def __call__(self, x):
        return forward(self, x)


def _param_views(flat: np.ndarray, layers: Sequence[Layer]):
    views, offset = [], 0
    for layer in layers:
        n_w, n_b = layer.weights.size, layer.bias.size
        w = flat[offset:offset + n_w].reshape(layer.weights.shape)
        b = flat[offset + n_w:offset + n_w + n_b]
        views.append((w, b))
        offset += n_w + n_b
    return views


def _check_chain(layers: Sequence[Layer]) -> None:
    for k in range(len(layers) - 1):
        if layers[k].fan_out != layers[k + 1].fan_in:
            raise ConfigurationError(
                f"layer {k} outputs {layers[k].fan_out} values but layer {k + 1} "
                f"expects {layers[k + 1].fan_in}"
            )


def init_layer(fan_in: int, fan_out: int, activation: str, rng: np.random.Generator) -> Layer:
    """Uniform weights with standard deviation 1/sqrt(fan_in), zero bias."""
    limit = np.sqrt(3.0 / fan_in)
    weights = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    return Layer(weights, np.zeros(fan_out), activation)


def init_network(widths: Sequence[int], activations: Sequence[str], seed: int) -> Network:
    """Build a freshly initialized network.

    ``widths`` lists every dimension from the input to the output, so a
    network with ``len(widths) - 1`` layers is returned. Identical seeds give
    bit-identical parameters.
    """
    widths = [int(w) for w in widths]
    if len(activations) != len(widths) - 1:
        raise ConfigurationError(
            f"{len(widths)} widths need {len(widths) - 1} activations, got {len(activations)}"
        )
    if len(widths) < 2 or min(widths) < 1:
        raise ConfigurationError(f"invalid widths {widths}")
    rng = np.random.default_rng(seed)
    layers = [
        init_layer(widths[k], widths[k + 1], activations[k], rng)
        for k in range(len(widths) - 1)
    ]
    return Network(layers)


@dataclass
class ForwardCache:
    """Per-layer inputs and activated outputs recorded by ``forward_with_cache``."""

    inputs: List[np.ndarray]
    outputs: List[np.ndarray]
    net_id: int
    version: int
    squeeze: bool


def _as_batch(net: Network, x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise InputError(f"expected inputs of width {net.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("network input contains non-finite values")
    return x, squeeze


def forward_with_cache(net: Network, x) -> Tuple[np.ndarray, ForwardCache]:
    x, squeeze = _as_batch(net, x)
    inputs, outputs = [], []
    h = x
    for layer in net.layers:
        inputs.append(h)
        h = _activate(h @ layer.weights + layer.bias, layer.activation)
        outputs.append(h)
    cache = ForwardCache(inputs, outputs, id(net), net.version, squeeze)
    return (h[0] if squeeze else h), cache


def forward(net: Network, x) -> np.ndarray:
    """Evaluate the network on a vector or on a batch of row vectors."""
    return forward_with_cache(net, x)[0]


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input: np.ndarray
    # flat buffer backing ``weights``/``biases`` in network parameter order
    flat: Optional[np.ndarray] = None

    def as_flat(self) -> np.ndarray:
        if self.flat is not None:
            return self.flat
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [np.ravel(w), np.ravel(b)]
        return np.concatenate(parts)


def gradients(net: Network, loss_grad_at_output, cache: ForwardCache) -> Gradients:
    """Reverse-mode gradients of a loss given dLoss/dOutput.

    Gradients are returned for every layer, frozen or not; ``adam_step``
    is responsible for leaving frozen layers alone.
    """
    if (
        cache.net_id != id(net)
        or cache.version != net.version
        or len(cache.outputs) != len(net.layers)
    ):
        raise InternalError("forward cache does not belong to this network state")
    delta = np.asarray(loss_grad_at_output, dtype=np.float64)
    if cache.squeeze and delta.ndim == 1:
        delta = delta[None, :]
    if delta.shape != cache.outputs[-1].shape:
        raise InternalError(
            f"output gradient shape {delta.shape} != output shape {cache.outputs[-1].shape}"
        )
    flat = np.empty_like(net.parameters)
    views = _param_views(flat, net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        dz = delta * _activation_grad(cache.outputs[k], layer.activation)
        np.matmul(cache.inputs[k].T, dz, out=views[k][0])
        np.sum(dz, axis=0, out=views[k][1])
        delta = dz @ layer.weights.T
    grad_in = delta[0] if cache.squeeze else delta
    return Gradients([w for w, _ in views], [b for _, b in views], grad_in, flat)


@dataclass
class AdamState:
    """Adam moments over a network's flat parameter vector."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_network(cls, net: Network, learning_rate: float = 1e-3, **kwargs) -> "AdamState":
        n = net.parameters.size
        return cls(np.zeros(n), np.zeros(n), learning_rate=learning_rate, **kwargs)


def adam_step(net: Network, grads: Gradients, state: AdamState) -> Tuple[Network, AdamState]:
    """One bias-corrected Adam update, applied in place.

    Gradients of frozen layers are zeroed before they reach the moments, so
    frozen parameters and their moments never change.
    """
    g = grads.as_flat()
    params = net.parameters
    if g.shape != params.shape or state.first_moment.shape != params.shape:
        raise InternalError(
            f"gradient set ({g.size}) / optimizer state ({state.first_moment.size}) do not match "
            f"the network's {params.size} parameters"
        )
    g = g * net.trainable_mask()
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    m, v = state.first_moment, state.second_moment
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    step_size = state.learning_rate * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    # algebraically lr * m_hat / (sqrt(v_hat) + eps)
    params -= step_size * m / (np.sqrt(v) + state.epsilon * np.sqrt(1.0 - b2 ** t))
    net.version += 1
    return net, state


def surgery_extract_hidden(net: Network) -> List[Layer]:
    """Copies of every layer except the input and output layers."""
    if len(net.layers) < 3:
        raise ConfigurationError(
            f"need input, hidden and output layers; network has {len(net.layers)} layers"
        )
    return [layer.copy() for layer in net.layers[1:-1]]


def surgery_rebuild(
    hidden: Sequence[Layer],
    new_input_dim: int,
    new_output_dim: int,
    freeze_mask: Sequence[bool],
    append: Sequence[Layer] = (),
    seed: int = 0,
    input_activation: str = "relu",
    output_activation: str = "sigmoid",
) -> Network:
    """Wrap carried-over hidden layers with fresh input and output layers.

    Hidden layers keep their parameters and take their frozen flag from
    ``freeze_mask``; layers in ``append`` follow them and stay trainable.
    """
    if not hidden:
        raise ConfigurationError("no hidden layers to rebuild around")
    if len(freeze_mask) != len(hidden):
        raise ConfigurationError(
            f"freeze mask has {len(freeze_mask)} entries for {len(hidden)} hidden layers"
        )
    carried = []
    for layer, frozen in zip(hidden, freeze_mask):
        layer = layer.copy()
        layer.frozen = bool(frozen)
        carried.append(layer)
    extra = []
    for layer in append:
        layer = layer.copy()
        layer.frozen = False
        extra.append(layer)
    middle = carried + extra
    _check_chain(middle)
    rng = np.random.default_rng(seed)
    first = init_layer(int(new_input_dim), middle[0].fan_in, input_activation, rng)
    last = init_layer(middle[-1].fan_out, int(new_output_dim), output_activation, rng)
    return Network([first] + middle + [last])


# -- serialization ---------------------------------------------------------
#
# Layout: magic, u32 format version, u32 header length, UTF-8 JSON header,
# then float64 little-endian parameters (weights row-major, then bias) for
# every layer of every group in header order.


def dump_layer_groups(groups: Dict[str, Sequence[Layer]], meta: Optional[dict] = None) -> bytes:
    header = {
        "version": FORMAT_VERSION,
        "groups": [
            {
                "name": name,
                "layers": [
                    {
                        "fan_in": layer.fan_in,
                        "fan_out": layer.fan_out,
                        "activation": layer.activation,
                        "frozen": layer.frozen,
                    }
                    for layer in layers
                ],
            }
            for name, layers in groups.items()
        ],
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [FORMAT_MAGIC, struct.pack("<II", FORMAT_VERSION, len(head)), head]
    for layers in groups.values():
        for layer in layers:
            chunks.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(chunks)


def load_layer_groups(blob: bytes) -> Tuple[Dict[str, List[Layer]], dict]:
    if blob[:4] != FORMAT_MAGIC:
        raise InputError("not a parameter file (bad magic)")
    version, head_len = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise InputError(f"unsupported parameter file version {version}")
    header = json.loads(blob[12:12 + head_len].decode("utf-8"))
    offset = 12 + head_len
    groups: Dict[str, List[Layer]] = {}
    for group in header["groups"]:
        layers = []
        for entry in group["layers"]:
            n_w = entry["fan_in"] * entry["fan_out"]
            w = np.frombuffer(blob, dtype="<f8", count=n_w, offset=offset)
            offset += 8 * n_w
            b = np.frombuffer(blob, dtype="<f8", count=entry["fan_out"], offset=offset)
            offset += 8 * entry["fan_out"]
            layers.append(Layer(
                w.reshape(entry["fan_in"], entry["fan_out"]).astype(np.float64),
                b.astype(np.float64),
                entry["activation"],
                entry["frozen"],
            ))
        groups[group["name"]] = layers
    if offset != len(blob):
        raise InputError("parameter file has trailing or missing bytes")
    return groups, header["meta"]


def network_to_bytes(net: Network) -> bytes:
    return dump_layer_groups({"network": net.layers})


def network_from_bytes(blob: bytes) -> Network:
    groups, _ = load_layer_groups(blob)
    return Network(groups["network"])
