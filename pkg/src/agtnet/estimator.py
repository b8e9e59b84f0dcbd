"""scikit-learn compatible front end for the AGT network.

``X`` is a sequence of pre-tokenized sentences (each a sequence of
strings); ``y`` holds integer labels in ``0 .. n_classes - 1``.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .analysis import records_from_forward
from .corpus import (
    EmbeddingTable,
    Vocabulary,
    embeddings_from_mapping,
    encode_batch,
    load_embeddings,
    random_embeddings,
)
from .model import EVAL, AgtNetwork, NetworkConfig, load_checkpoint, network_forward, save_checkpoint
from .training import (
    EncodedUnits,
    FitResult,
    TrainConfig,
    batch_slices,
    derive_seed,
    fit,
    predict_proba,
)


def check_token_sequences(X, name="X"):
    """Validate a batch of tokenized sentences and return it as a list of tuples."""
    if isinstance(X, (str, bytes)):
        raise TypeError(f"{name} must be a sequence of token sequences, not a string")
    try:
        seqs = list(X)
    except TypeError:
        raise TypeError(f"{name} must be iterable") from None
    if not seqs:
        raise ValueError(f"{name} is empty")
    out = []
    for i, seq in enumerate(seqs):
        if isinstance(seq, str):
            raise TypeError(f"{name}[{i}] is a string; pass a list of tokens")
        seq = tuple(seq)
        if not seq:
            raise ValueError(f"{name}[{i}] has no tokens")
        if not all(isinstance(t, str) for t in seq):
            raise TypeError(f"{name}[{i}] contains non-string tokens")
        out.append(seq)
    return out


def check_labels(y, n_samples, n_classes=5, name="y"):
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"{name} must be 1-D with {n_samples} entries, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise ValueError(f"{name} must hold integer class labels")
        y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"{name} labels must lie in 0..{n_classes - 1}")
    return y.astype(np.int64)


class AGTClassifier(ClassifierMixin, BaseEstimator):
    """Attention gated transformation network for sentence classification.

    Defaults follow the published SST recipe (15 layers of width 200,
    gate bias 1, dropout 0.2, Adadelta scaled by 0.0005, batches of 50).
    When ``embeddings`` is None every word gets a random vector drawn
    uniformly from ``[-embedding_init_range, embedding_init_range]``.
    """

    def __init__(
        self,
        n_layers=15,
        hidden=200,
        head_hidden=None,
        dropout=0.2,
        gate_bias=1.0,
        learning_rate=0.0005,
        rho=0.95,
        epsilon=1e-6,
        batch_size=50,
        epochs=10,
        max_selector_layer=None,
        embeddings=None,
        embedding_dim=300,
        embedding_init_range=0.05,
        n_classes=5,
        random_state=0,
    ):
        self.n_layers = n_layers
        self.hidden = hidden
        self.head_hidden = head_hidden
        self.dropout = dropout
        self.gate_bias = gate_bias
        self.learning_rate = learning_rate
        self.rho = rho
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_selector_layer = max_selector_layer
        self.embeddings = embeddings
        self.embedding_dim = embedding_dim
        self.embedding_init_range = embedding_init_range
        self.n_classes = n_classes
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.random_state,
            dropout=self.dropout,
            n_layers=self.n_layers,
            hidden=self.hidden,
            head_hidden=self.head_hidden,
            gate_bias_init=self.gate_bias,
            learning_rate=self.learning_rate,
            rho=self.rho,
            epsilon=self.epsilon,
            max_selector_layer=self.max_selector_layer,
        )

    def _build_embeddings(self, vocabulary):
        seed = derive_seed(self.random_state, "embeddings")
        if self.embeddings is None:
            return random_embeddings(vocabulary, self.embedding_dim, seed, self.embedding_init_range)
        if isinstance(self.embeddings, EmbeddingTable):
            if len(self.embeddings) != len(vocabulary):
                raise ValueError("embedding table rows must match the vocabulary built from X")
            return self.embeddings
        if isinstance(self.embeddings, dict):
            return embeddings_from_mapping(self.embeddings, vocabulary, seed)
        return load_embeddings(self.embeddings, vocabulary, seed)

    def _encode(self, X):
        return [self.vocabulary_.encode(seq) for seq in X]

    def fit(self, X, y, X_dev=None, y_dev=None, on_epoch=None):
        """Train on ``(X, y)``; select the epoch with the best accuracy on the dev split.

        Without a dev split the training data doubles as the selection set.
        """
        X = check_token_sequences(X)
        y = check_labels(y, len(X), self.n_classes)
        if X_dev is None:
            X_dev, y_dev = X, y
        else:
            X_dev = check_token_sequences(X_dev, "X_dev")
            y_dev = check_labels(y_dev, len(X_dev), self.n_classes, "y_dev")
        config = self._train_config()

        self.vocabulary_ = Vocabulary.build(X)
        self.embedding_table_ = self._build_embeddings(self.vocabulary_)
        net_config = NetworkConfig(
            input_dim=self.embedding_table_.dim,
            hidden=self.hidden,
            n_layers=self.n_layers,
            head_hidden=self.head_hidden,
            dropout=self.dropout,
            n_classes=self.n_classes,
            gate_bias=self.gate_bias,
            max_selector_layer=self.max_selector_layer,
        )
        net = AgtNetwork.initialize(net_config, derive_seed(self.random_state, "init"))
        train_units = EncodedUnits(self._encode(X), y)
        dev_units = EncodedUnits(self._encode(X_dev), y_dev)

        result: FitResult = fit(net, train_units, dev_units, self.embedding_table_, config, on_epoch)
        self.network_ = result.network
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.classes_ = np.arange(self.n_classes)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        X = check_token_sequences(X)
        return predict_proba(self.network_, self._encode(X), self.embedding_table_, self.batch_size)

    def predict(self, X):
        # np.argmax breaks ties toward the smallest class index
        return np.argmax(self.predict_proba(X), axis=1)

    def attention_records(self, X, y=None):
        """Per-sentence attention/gate captures in eval mode."""
        check_is_fitted(self, "network_")
        X = check_token_sequences(X)
        y = None if y is None else check_labels(y, len(X), self.n_classes)
        ids = self._encode(X)
        records = []
        for sl in batch_slices(len(X), self.batch_size):
            batch, mask = encode_batch(ids[sl], self.embedding_table_)
            probs, fwd = network_forward(self.network_, batch, mask, EVAL)
            records += records_from_forward(
                fwd, mask, X[sl], np.argmax(probs.data, axis=1), None if y is None else y[sl]
            )
        return records

    def save(self, path):
        check_is_fitted(self, "network_")
        params = {k: v for k, v in self.get_params().items() if k != "embeddings"}
        save_checkpoint(
            path,
            self.network_,
            self.vocabulary_,
            extra_arrays={"embeddings": self.embedding_table_.matrix},
            metadata={"estimator_params": params, "best_epoch": self.best_epoch_},
        )

    @classmethod
    def load(cls, path) -> "AGTClassifier":
        ckpt = load_checkpoint(path)
        clf = cls(**ckpt.metadata.get("estimator_params", {}))
        clf.network_ = ckpt.network
        vocab = Vocabulary()
        for w in ckpt.vocabulary[1:]:
            vocab.add(w)
        clf.vocabulary_ = vocab
        matrix = ckpt.arrays["embeddings"]
        clf.embedding_table_ = EmbeddingTable(matrix, np.zeros(len(matrix), dtype=bool))
        clf.best_epoch_ = ckpt.metadata.get("best_epoch")
        clf.history_ = []
        clf.classes_ = np.arange(clf.network_.config.n_classes)
        return clf
