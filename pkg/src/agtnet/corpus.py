"""Treebank parsing, vocabulary/embedding loading, batching and the synthetic corpus."""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

N_CLASSES = 5
UNK_TOKEN = "<unk>"
OOV_INIT_RANGE = 0.05

SENTENCES_ONLY = "sentences_only"
PHRASES_AND_SENTENCES = "phrases_and_sentences"
UNIT_MODES = (SENTENCES_ONLY, PHRASES_AND_SENTENCES)


class TreebankParseError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class EmbeddingFormatError(ValueError):
    pass


@dataclass
class LabeledTree:
    label: int
    children: List["LabeledTree"] = field(default_factory=list)
    token: Optional[str] = None

    @property
    def is_leaf(self):
        return self.token is not None

    def leaves(self):
        if self.is_leaf:
            return [self.token]
        out = []
        for c in self.children:
            out.extend(c.leaves())
        return out

    def nodes(self):
        """Pre-order traversal, root first."""
        yield self
        for c in self.children:
            yield from c.nodes()

    def render(self):
        if self.is_leaf:
            return f"({self.label} {self.token})"
        return f"({self.label} " + " ".join(c.render() for c in self.children) + ")"

    def __str__(self):
        return self.render()


def _byte_offset(text, char_index):
    return len(text[:char_index].encode("utf-8"))


def parse_treebank_line(line: str) -> LabeledTree:
    """Parse one labelled s-expression, e.g. ``(3 (2 It) (3 (2 's) (4 good)))``."""
    text = line.strip()
    n = len(text)
    pos = 0

    def err(msg, at):
        return TreebankParseError(msg, _byte_offset(text, at))

    def skip_ws(i):
        while i < n and text[i].isspace():
            i += 1
        return i

    def read_atom(i):
        j = i
        while j < n and not text[j].isspace() and text[j] not in "()":
            j += 1
        return text[i:j], j

    def parse_node(i):
        if i >= n:
            raise err("unexpected end of input, expected '('", i)
        if text[i] != "(":
            raise err(f"expected '(' but found {text[i]!r}", i)
        i = skip_ws(i + 1)
        label_start = i
        label_text, i = read_atom(i)
        if not label_text:
            if i >= n:
                raise err("unexpected end of input, expected label", i)
            raise err("empty node (missing label)", label_start)
        try:
            label = int(label_text)
        except ValueError:
            raise err(f"non-integer label {label_text!r}", label_start) from None
        if not 0 <= label < N_CLASSES:
            raise err(f"label {label} outside 0..{N_CLASSES - 1}", label_start)
        i = skip_ws(i)
        if i >= n:
            raise err("unexpected end of input", i)
        if text[i] == ")":
            raise err("empty node (no token or children)", i)
        if text[i] != "(":
            token, i = read_atom(i)
            i = skip_ws(i)
            if i >= n:
                raise err("unexpected end of input, expected ')'", i)
            if text[i] != ")":
                raise err(f"expected ')' after token {token!r}", i)
            return LabeledTree(label, token=token), i + 1
        children = []
        while True:
            i = skip_ws(i)
            if i >= n:
                raise err("unexpected end of input, expected ')'", i)
            if text[i] == ")":
                return LabeledTree(label, children), i + 1
            child, i = parse_node(i)
            children.append(child)

    tree, pos = parse_node(skip_ws(pos))
    pos = skip_ws(pos)
    if pos != n:
        raise err("trailing characters after tree", pos)
    return tree


def read_treebank(path) -> List[LabeledTree]:
    trees = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                trees.append(parse_treebank_line(line))
            except TreebankParseError as e:
                raise TreebankParseError(f"{path}:{lineno}: {e.args[0]}", e.offset) from None
    return trees


@dataclass(frozen=True)
class TrainingUnit:
    tokens: Tuple[str, ...]
    label: int
    is_full_sentence: bool = True


def extract_training_units(tree: LabeledTree, mode: str = PHRASES_AND_SENTENCES) -> List[TrainingUnit]:
    if mode == SENTENCES_ONLY:
        return [TrainingUnit(tuple(tree.leaves()), tree.label, True)]
    if mode != PHRASES_AND_SENTENCES:
        raise ValueError(f"unknown unit mode {mode!r}")
    return [
        TrainingUnit(tuple(node.leaves()), node.label, node is tree)
        for node in tree.nodes()
    ]


class Vocabulary:
    """Word/id bijection with a reserved unknown id (0)."""

    def __init__(self, words: Iterable[str] = ()):
        self.itos = [UNK_TOKEN]
        self.stoi = {UNK_TOKEN: 0}
        for w in words:
            self.add(w)

    unk_id = 0

    def add(self, word):
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]]):
        vocab = cls()
        for seq in sequences:
            for tok in seq:
                vocab.add(tok.lower())
        return vocab

    def lookup(self, token):
        """Lowercased form first, then the original casing, then unknown."""
        idx = self.stoi.get(token.lower())
        if idx is None:
            idx = self.stoi.get(token, self.unk_id)
        return idx

    def encode(self, tokens):
        return [self.lookup(t) for t in tokens]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, word):
        return word in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos


@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    pretrained: np.ndarray  # bool per row

    @property
    def dim(self):
        return self.matrix.shape[1]

    @property
    def coverage(self):
        return int(self.pretrained.sum())

    def __len__(self):
        return self.matrix.shape[0]


def random_embeddings(vocabulary: Vocabulary, dim: int, seed: int, init_range=OOV_INIT_RANGE) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-init_range, init_range, size=(len(vocabulary), dim))
    return EmbeddingTable(matrix, np.zeros(len(vocabulary), dtype=bool))


def load_embeddings(path, vocabulary: Vocabulary, seed: int) -> EmbeddingTable:
    """Read a ``word v1 .. vd`` text file for the words in ``vocabulary``.

    Missing words get uniform[-0.05, 0.05] rows drawn from ``seed``; the
    random draw covers every row so it does not depend on file coverage.
    """
    dim = None
    found: Dict[int, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip("\r").split(" ")
            if len(parts) == 1 and not parts[0]:
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise EmbeddingFormatError(f"{path}:{lineno}: no vector values")
            elif len(values) != dim:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: vector has {len(values)} dimensions, expected {dim}"
                )
            idx = vocabulary.stoi.get(word)
            if idx is None or idx in found:
                continue
            try:
                found[idx] = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as e:
                raise EmbeddingFormatError(f"{path}:{lineno}: {e}") from None
    if dim is None:
        raise EmbeddingFormatError(f"{path}: empty embedding file")
    return _fill_table(found, vocabulary, dim, seed, str(path))


def embeddings_from_mapping(vectors: Dict[str, np.ndarray], vocabulary: Vocabulary, seed: int) -> EmbeddingTable:
    """Same as :func:`load_embeddings` for an in-memory ``word -> vector`` dict."""
    dims = {len(v) for v in vectors.values()}
    if len(dims) != 1:
        raise EmbeddingFormatError(f"vectors must share one dimension, got {sorted(dims)}")
    found = {}
    for word, vec in vectors.items():
        idx = vocabulary.stoi.get(word)
        if idx is not None and idx not in found:
            found[idx] = np.asarray(vec, dtype=np.float64)
    return _fill_table(found, vocabulary, dims.pop(), seed, "<mapping>")


def _fill_table(found, vocabulary, dim, seed, source):
    table = random_embeddings(vocabulary, dim, seed)
    for idx, vec in found.items():
        if not np.isfinite(vec).all():
            raise EmbeddingFormatError(f"{source}: non-finite vector for {vocabulary.itos[idx]!r}")
        table.matrix[idx] = vec
        table.pretrained[idx] = True
    return table


def write_embeddings(path, vectors: Dict[str, np.ndarray]):
    """Write ``word v1 .. vd`` lines; floats use repr so values round-trip exactly."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for word, vec in vectors.items():
            fh.write(word + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def encode_batch(token_ids: Sequence[Sequence[int]], embeddings: EmbeddingTable):
    """Stack id sequences into a zero-padded ``(batch, N_max, d_in)`` array and mask."""
    if len(token_ids) == 0:
        raise ValueError("encode_batch: empty batch")
    lengths = [len(seq) for seq in token_ids]
    if min(lengths) < 1:
        raise ValueError("encode_batch: every unit needs at least one token")
    n_max = max(lengths)
    batch = np.zeros((len(token_ids), n_max, embeddings.dim))
    mask = np.zeros((len(token_ids), n_max), dtype=bool)
    for b, seq in enumerate(token_ids):
        batch[b, : len(seq)] = embeddings.matrix[np.asarray(seq, dtype=np.int64)]
        mask[b, : len(seq)] = True
    return batch, mask


# -- synthetic negation grammar ---------------------------------------------

NOUNS = (
    "movie film story plot script cast actor actress director score soundtrack "
    "ending opening sequel remake premise dialogue pacing cinematography camera "
    "editing costume set villain hero romance comedy drama thriller documentary "
    "animation performance character scene climax finale trailer montage effect "
    "lighting production adaptation narrator composer writer producer screenplay "
    "studio festival premiere cameo stunt chase battle song dance musical western "
    "horror mystery satire parody biopic epic saga episode pilot season series "
    "franchise reboot prequel spinoff feature short cartoon"
).split()

_BASE_LABEL = {("good", False): 3, ("good", True): 4, ("bad", False): 1, ("bad", True): 0}
TEMPLATES = tuple(
    (negated, very, adj) for adj in ("good", "bad") for very in (False, True) for negated in (False, True)
)


def synthetic_label(negated: bool, very: bool, adj: str) -> int:
    base = _BASE_LABEL[(adj, very)]
    return 4 - base if negated else base


def synthetic_sentence(noun, negated, very, adj):
    words = ["the", noun, "was"]
    if negated:
        words.append("not")
    if very:
        words.append("very")
    words.append(adj)
    return tuple(words)


def _noun_pool(count):
    pool = list(NOUNS)
    k = 0
    while len(pool) < count:
        pool.append(f"thing{k}")
        k += 1
    return pool


def generate_synthetic_corpus(size: int, seed: int, test_fraction: float = 0.2):
    """Sentences ``the <noun> was [not] [very] <good|bad>`` with balanced labels.

    Returns ``(train, test)``; the two splits use disjoint nouns. Labels
    present are {0, 1, 3, 4}, two templates each.
    """
    if size < 10:
        raise ValueError("synthetic corpus size must be >= 10")
    rng = np.random.default_rng(seed)
    n_test = int(round(size * test_fraction))
    n_train = size - n_test
    n_templates = len(TEMPLATES)
    nouns_train = max(1, -(-n_train // n_templates))
    nouns_test = max(1, -(-n_test // n_templates))
    pool = _noun_pool(nouns_train + nouns_test)
    order = rng.permutation(len(pool))
    train_nouns = [pool[i] for i in order[:nouns_train]]
    test_nouns = [pool[i] for i in order[nouns_train: nouns_train + nouns_test]]

    def build(count, nouns):
        units = []
        template_order = rng.permutation(count) % n_templates
        for i, t in enumerate(template_order):
            negated, very, adj = TEMPLATES[t]
            noun = nouns[i % len(nouns)]
            units.append(
                TrainingUnit(
                    synthetic_sentence(noun, negated, very, adj),
                    synthetic_label(negated, very, adj),
                    True,
                )
            )
        return units

    return build(n_train, train_nouns), build(n_test, test_nouns)


def synthetic_embeddings(units: Iterable[TrainingUnit], dim: int, seed: int, scale=0.5):
    """Stand-in "pretrained" vectors for every word of the synthetic corpus.

    Drawn uniformly from [-scale, scale], roughly the per-component
    magnitude of 300-d GloVe vectors.
    """
    words = sorted({tok for u in units for tok in u.tokens})
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-scale, scale, size=(len(words), dim))
    return dict(zip(words, matrix))


def unit_to_tree(unit: TrainingUnit) -> LabeledTree:
    """Flat tree for a synthetic unit; leaves carry a lexical polarity label."""
    lex = {"good": 3, "bad": 1}
    leaves = [LabeledTree(lex.get(tok, 2), token=tok) for tok in unit.tokens]
    if len(leaves) == 1:
        return LabeledTree(unit.label, token=unit.tokens[0])
    return LabeledTree(unit.label, leaves)
