"""The attention-gated transformation network.

Word vectors are projected to the hidden width, then a stack of layers
each attends over the projected words with its own selector. Layer 0
emits its selection vector directly; every later layer mixes a tanh
transform of ``[y_prev ; s_l]`` with the carried ``y_prev`` through a
sigmoid gate driven by ``s_l`` alone. A two-layer head produces class
probabilities.
"""

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

TRAIN = "train"
EVAL = "eval"


@dataclass
class NetworkConfig:
    input_dim: int = 300
    hidden: int = 200
    n_layers: int = 15
    head_hidden: Optional[int] = None
    dropout: float = 0.2
    n_classes: int = 5
    gate_bias: float = 1.0
    # layers above this index reuse its selection vector (None: no reuse)
    max_selector_layer: Optional[int] = None

    def __post_init__(self):
        if self.head_hidden is None:
            self.head_hidden = self.hidden
        for key in ("input_dim", "hidden", "n_layers", "head_hidden", "n_classes"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be >= 1, got {getattr(self, key)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.max_selector_layer is not None and self.max_selector_layer < 0:
            raise ValueError("max_selector_layer must be >= 0")


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


@dataclass
class Projection:
    weight: Tensor  # (d_in, d)
    bias: Tensor


@dataclass
class AttentionSelector:
    score_matrix: Tensor  # (d, d)
    score_vector: Tensor  # (d, 1)


@dataclass
class TransformGate:
    weight: Tensor  # (d, d)
    bias: Tensor


@dataclass
class AgtLayer:
    selector: AttentionSelector
    # layer 0 outputs its selection vector directly and owns no gate/transform
    gate: Optional[TransformGate] = None
    transform_weight: Optional[Tensor] = None  # (2d, d)
    transform_bias: Optional[Tensor] = None


@dataclass
class Head:
    hidden_weight: Tensor
    hidden_bias: Tensor
    output_weight: Tensor
    output_bias: Tensor


@dataclass
class AgtNetwork:
    config: NetworkConfig
    projection: Projection
    layers: List[AgtLayer]
    head: Head

    @classmethod
    def initialize(cls, config: NetworkConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        d, d_in, d_h = config.hidden, config.input_dim, config.head_hidden

        def p(data, name):
            return ad.parameter(data, name)

        projection = Projection(
            p(glorot(rng, d_in, d), "projection.weight"),
            p(np.zeros(d), "projection.bias"),
        )
        layers = []
        for l in range(config.n_layers):
            pre = f"layers.{l}"
            selector = AttentionSelector(
                p(glorot(rng, d, d), f"{pre}.selector.score_matrix"),
                p(glorot(rng, d, 1), f"{pre}.selector.score_vector"),
            )
            if l == 0:
                layers.append(AgtLayer(selector))
                continue
            layers.append(
                AgtLayer(
                    selector,
                    TransformGate(
                        p(glorot(rng, d, d), f"{pre}.gate.weight"),
                        p(np.full(d, config.gate_bias), f"{pre}.gate.bias"),
                    ),
                    p(glorot(rng, 2 * d, d), f"{pre}.transform.weight"),
                    p(np.zeros(d), f"{pre}.transform.bias"),
                )
            )
        head = Head(
            p(glorot(rng, d, d_h), "head.hidden.weight"),
            p(np.zeros(d_h), "head.hidden.bias"),
            p(glorot(rng, d_h, config.n_classes), "head.output.weight"),
            p(np.zeros(config.n_classes), "head.output.bias"),
        )
        return cls(config, projection, layers, head)

    def named_parameters(self):
        """Parameters in a fixed order, keyed by their dotted names."""
        out = [self.projection.weight, self.projection.bias]
        for layer in self.layers:
            out += [layer.selector.score_matrix, layer.selector.score_vector]
            if layer.gate is not None:
                out += [layer.gate.weight, layer.gate.bias, layer.transform_weight, layer.transform_bias]
        out += [self.head.hidden_weight, self.head.hidden_bias, self.head.output_weight, self.head.output_bias]
        return {t.name: t for t in out}

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for t in self.parameters():
            t.zero_grad()

    def state_dict(self):
        return {name: t.data.copy() for name, t in self.named_parameters().items()}

    def load_state_dict(self, state):
        params = self.named_parameters()
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise KeyError(f"state mismatch; missing={missing} unexpected={extra}")
        for name, t in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {t.shape}")
            t.data = arr.copy()
            t.zero_grad()

    def copy(self):
        other = AgtNetwork.initialize(self.config, seed=0)
        other.load_state_dict(self.state_dict())
        return other


# -- forward pieces -----------------------------------------------------------


def _affine(x, weight, bias):
    return ad.add(ad.matmul(x, weight), bias)


def project(net: AgtNetwork, embedded, mask=None) -> Tensor:
    """Shared ``tanh(x W + b)`` over every word position: (b, N, d_in) -> (b, N, d)."""
    embedded = ad.as_tensor(embedded)
    if embedded.shape[-1] != net.config.input_dim:
        raise ad.ShapeError(
            f"input width {embedded.shape[-1]} does not match projection input {net.config.input_dim}"
        )
    return ad.tanh(_affine(embedded, net.projection.weight, net.projection.bias))


def attention_scores(layer: AgtLayer, words: Tensor) -> Tensor:
    """``m_n = w . tanh(W B[n])`` for every word: (b, N, d) -> (b, N)."""
    hidden = ad.tanh(ad.matmul(words, layer.selector.score_matrix))
    scores = ad.matmul(hidden, layer.selector.score_vector)
    return ad.reshape(scores, scores.shape[:-1])


def attend(layer: AgtLayer, words: Tensor, mask):
    """Return ``(selection, weights)``: the attention-weighted word sum and the weights."""
    words = ad.as_tensor(words)
    mask = np.asarray(mask, dtype=bool)
    weights = ad.masked_softmax(attention_scores(layer, words), mask)
    b, n = weights.shape
    selection = ad.matmul(ad.reshape(weights, (b, 1, n)), words)
    return ad.reshape(selection, (b, words.shape[-1])), weights


def gate_activation(layer: AgtLayer, selection: Tensor) -> Tensor:
    return ad.sigmoid(_affine(selection, layer.gate.weight, layer.gate.bias))


def layer_forward(layer: AgtLayer, y_prev, words, mask, selection=None, weights=None, force_gate=None):
    """One gated layer (index >= 1). Returns ``(y, weights, gate)``.

    ``selection``/``weights`` may be supplied to reuse another layer's
    selection vector. ``force_gate`` replaces the gate by a constant.
    """
    y_prev = ad.as_tensor(y_prev)
    if selection is None:
        selection, weights = attend(layer, words, mask)
    if y_prev.shape != selection.shape:
        raise ad.ShapeError(f"y_prev {y_prev.shape} and selection {selection.shape} differ")
    if force_gate is None:
        gate = gate_activation(layer, selection)
    else:
        gate = Tensor(np.full(selection.shape, float(force_gate)))
    transformed = ad.tanh(
        _affine(ad.concat(y_prev, selection), layer.transform_weight, layer.transform_bias)
    )
    y = ad.add(ad.mul(transformed, gate), ad.mul(y_prev, ad.sub(1.0, gate)))
    return y, weights, gate


def _dropout(x: Tensor, rate, rng):
    if rate <= 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return ad.mul(x, Tensor(keep / (1.0 - rate)))


def head_forward(net: AgtNetwork, y: Tensor, mode=EVAL, rng=None) -> Tensor:
    hidden = ad.tanh(_affine(y, net.head.hidden_weight, net.head.hidden_bias))
    if mode == TRAIN:
        hidden = _dropout(hidden, net.config.dropout, rng)
    return ad.softmax(_affine(hidden, net.head.output_weight, net.head.output_bias))


@dataclass
class ForwardRecord:
    """Per-layer captures for one batch.

    ``attention[l]`` is (b, N) for every layer; ``gates[l - 1]`` is (b, d)
    for layers 1..L-1 (layer 0 has no gate).
    """

    attention: List[np.ndarray] = field(default_factory=list)
    gates: List[np.ndarray] = field(default_factory=list)
    outputs: List[np.ndarray] = field(default_factory=list)


def network_forward(net: AgtNetwork, embedded, mask, mode=EVAL, seed=None, rng=None, force_gate=None):
    """Class probabilities ``(b, n_classes)`` and a ``ForwardRecord``.

    Dropout (inverted scaling) touches each layer output and the head's
    hidden layer in ``train`` mode only; ``eval`` is deterministic.
    """
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode must be {TRAIN!r} or {EVAL!r}")
    if mode == TRAIN and rng is None:
        rng = np.random.default_rng(seed)
    mask = np.asarray(mask, dtype=bool)
    cfg = net.config
    words = project(net, embedded, mask)
    record = ForwardRecord()

    reuse_from = cfg.max_selector_layer
    selection, weights = attend(net.layers[0], words, mask)
    record.attention.append(weights.data)
    y = selection
    if mode == TRAIN:
        y = _dropout(y, cfg.dropout, rng)
    record.outputs.append(y.data)
    for l in range(1, cfg.n_layers):
        layer = net.layers[l]
        if reuse_from is None or l <= reuse_from:
            selection, weights = attend(layer, words, mask)
        y, weights, gate = layer_forward(layer, y, words, mask, selection, weights, force_gate)
        if mode == TRAIN:
            y = _dropout(y, cfg.dropout, rng)
        record.attention.append(weights.data)
        record.gates.append(gate.data)
        record.outputs.append(y.data)
    return head_forward(net, y, mode, rng), record


def predict_classes(probs):
    """Argmax per row; ties go to the smallest class index."""
    return np.argmax(np.asarray(probs), axis=-1)


# -- checkpoint container -----------------------------------------------------

MAGIC = b"AGTCKPT1"


def save_checkpoint(path, net: AgtNetwork, vocabulary=None, extra_arrays=None, metadata=None):
    """Write a self-describing binary checkpoint.

    Layout: magic, u64 header length, UTF-8 JSON header, then raw
    little-endian float64 buffers in header order. Output is a pure
    function of the inputs, so identical models give identical bytes.
    """
    arrays = dict(net.state_dict())
    for name, arr in (extra_arrays or {}).items():
        arrays[name] = np.asarray(arr, dtype=np.float64)
    tensors = []
    offset = 0
    for name, arr in arrays.items():
        nbytes = arr.size * 8
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {
        "format": "agt-checkpoint",
        "version": 1,
        "dtype": "<f8",
        "hyperparameters": asdict(net.config),
        "vocabulary": list(vocabulary.itos) if vocabulary is not None else None,
        "metadata": metadata or {},
        "tensors": tensors,
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


@dataclass
class Checkpoint:
    network: AgtNetwork
    vocabulary: Optional[list]
    arrays: Dict[str, np.ndarray]
    metadata: dict


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not an AGT checkpoint")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC): len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(raw[start: start + hlen].decode("utf-8"))
    body = raw[start + hlen:]
    arrays = {}
    for t in header["tensors"]:
        buf = body[t["offset"]: t["offset"] + t["nbytes"]]
        arrays[t["name"]] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(t["shape"])
    config = NetworkConfig(**header["hyperparameters"])
    net = AgtNetwork.initialize(config, seed=0)
    params = net.named_parameters()
    net.load_state_dict({k: arrays[k] for k in params})
    extras = {k: v for k, v in arrays.items() if k not in params}
    return Checkpoint(net, header["vocabulary"], extras, header.get("metadata", {}))
