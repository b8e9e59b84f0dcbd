"""Adadelta, the mini-batch training loop, evaluation and dev-set model selection."""

import logging
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .corpus import PHRASES_AND_SENTENCES, UNIT_MODES, EmbeddingTable, encode_batch
from .model import EVAL, TRAIN, AgtNetwork, network_forward, predict_classes

logger = logging.getLogger(__name__)


def derive_seed(seed: int, purpose: str) -> int:
    """Independent, reproducible sub-seed for one consumer of randomness."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(purpose.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class TrainConfig:
    batch_size: int = 50
    epochs: int = 10
    seed: int = 0
    dropout: float = 0.2
    n_layers: int = 15
    hidden: int = 200
    head_hidden: Optional[int] = None
    gate_bias_init: float = 1.0
    learning_rate: float = 0.0005
    rho: float = 0.95
    epsilon: float = 1e-6
    max_selector_layer: Optional[int] = None
    mode: str = PHRASES_AND_SENTENCES

    def __post_init__(self):
        for key in ("batch_size", "epochs", "n_layers", "hidden"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be >= 1, got {getattr(self, key)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.learning_rate <= 0 or self.epsilon <= 0 or not 0.0 < self.rho < 1.0:
            raise ValueError("learning_rate and epsilon must be > 0 and rho in (0, 1)")
        if self.mode not in UNIT_MODES:
            raise ValueError(f"mode must be one of {UNIT_MODES}")


class AdadeltaState:
    """Running averages of squared gradients and squared updates per parameter."""

    def __init__(self, params: Dict[str, np.ndarray], rho=0.95, epsilon=1e-6, lr=0.0005):
        self.rho = rho
        self.epsilon = epsilon
        self.lr = lr
        self.sq_grad = {k: np.zeros_like(v) for k, v in params.items()}
        self.sq_delta = {k: np.zeros_like(v) for k, v in params.items()}


def adadelta_step(params: Dict[str, ad.Tensor], grads: Dict[str, np.ndarray], state: AdadeltaState):
    rho, eps = state.rho, state.epsilon
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} does not match {p.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        eg = state.sq_grad[name]
        ed = state.sq_delta[name]
        eg[...] = rho * eg + (1.0 - rho) * g * g
        delta = -(np.sqrt(ed + eps) / np.sqrt(eg + eps)) * g
        ed[...] = rho * ed + (1.0 - rho) * delta * delta
        p.data = p.data + state.lr * delta


def make_optimizer(net: AgtNetwork, config: TrainConfig) -> AdadeltaState:
    return AdadeltaState(net.state_dict(), config.rho, config.epsilon, config.learning_rate)


@dataclass
class EncodedUnits:
    """Token-id sequences with their gold labels."""

    ids: List[List[int]]
    labels: np.ndarray

    def __len__(self):
        return len(self.ids)

    def subset(self, index):
        return EncodedUnits([self.ids[i] for i in index], self.labels[np.asarray(index, dtype=np.int64)])


def batch_slices(n, batch_size):
    return [slice(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


@dataclass
class EpochMetrics:
    mean_loss: float
    accuracy: float
    n_batches: int


def train_epoch(
    net: AgtNetwork,
    units: EncodedUnits,
    embeddings: EmbeddingTable,
    config: TrainConfig,
    state: AdadeltaState,
    epoch_index: int,
) -> EpochMetrics:
    if len(units) == 0:
        raise ValueError("train_epoch: no training units")
    perm = np.random.default_rng([derive_seed(config.seed, "shuffle"), epoch_index]).permutation(len(units))
    params = net.named_parameters()
    total_loss = 0.0
    correct = 0
    slices = batch_slices(len(units), config.batch_size)
    for b, sl in enumerate(slices):
        idx = perm[sl]
        batch, mask = encode_batch([units.ids[i] for i in idx], embeddings)
        targets = units.labels[idx]
        rng = np.random.default_rng([derive_seed(config.seed, "dropout"), epoch_index, b])
        net.zero_grad()
        probs, _ = network_forward(net, batch, mask, TRAIN, rng=rng)
        loss = ad.cross_entropy(probs, targets)
        ad.backward(loss)
        adadelta_step(params, {k: p.grad for k, p in params.items()}, state)
        total_loss += float(loss.data) * len(idx)
        correct += int((predict_classes(probs.data) == targets).sum())
    return EpochMetrics(total_loss / len(units), correct / len(units), len(slices))


def predict_proba(net: AgtNetwork, ids: Sequence[Sequence[int]], embeddings: EmbeddingTable, batch_size=50):
    out = []
    for sl in batch_slices(len(ids), batch_size):
        batch, mask = encode_batch(ids[sl], embeddings)
        probs, _ = network_forward(net, batch, mask, EVAL)
        out.append(probs.data)
    return np.concatenate(out, axis=0)


def evaluate(net: AgtNetwork, units: EncodedUnits, embeddings: EmbeddingTable, batch_size=50) -> float:
    if len(units) == 0:
        raise ValueError("evaluate: no units")
    pred = predict_classes(predict_proba(net, units.ids, embeddings, batch_size))
    return float((pred == units.labels).mean())


@dataclass
class EpochLog:
    epoch: int
    mean_train_loss: float
    train_acc: float
    dev_acc: float
    seconds: float

    def line(self):
        return (
            f"{self.epoch}\t{self.mean_train_loss:.10f}\t{self.train_acc:.6f}\t"
            f"{self.dev_acc:.6f}\t{self.seconds:.3f}"
        )


EPOCH_LOG_HEADER = "epoch\tmean_train_loss\ttrain_acc\tdev_acc\tseconds"


@dataclass
class FitResult:
    network: AgtNetwork
    best_epoch: int
    best_dev_accuracy: float
    history: List[EpochLog] = field(default_factory=list)


def select_best_epoch(dev_accuracies: Sequence[float]) -> int:
    """1-based epoch with the highest dev accuracy; the earliest wins ties."""
    return int(np.argmax(np.asarray(dev_accuracies))) + 1


def fit(
    net: AgtNetwork,
    train_units: EncodedUnits,
    dev_units: EncodedUnits,
    embeddings: EmbeddingTable,
    config: TrainConfig,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
) -> FitResult:
    """Train for ``config.epochs`` epochs and keep the best dev-accuracy weights.

    ``net`` ends up holding the final-epoch weights; the returned network
    holds the selected ones.
    """
    state = make_optimizer(net, config)
    best_state, best_acc, best_epoch = None, -1.0, 0
    history = []
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        metrics = train_epoch(net, train_units, embeddings, config, state, epoch)
        dev_acc = evaluate(net, dev_units, embeddings, config.batch_size)
        entry = EpochLog(epoch, metrics.mean_loss, metrics.accuracy, dev_acc, time.perf_counter() - start)
        history.append(entry)
        logger.info(entry.line())
        if on_epoch is not None:
            on_epoch(entry)
        if dev_acc > best_acc:
            best_state, best_acc, best_epoch = net.state_dict(), dev_acc, epoch
    best = net.copy()
    best.load_state_dict(best_state)
    return FitResult(best, best_epoch, best_acc, history)
