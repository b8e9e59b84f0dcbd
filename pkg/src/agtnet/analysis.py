"""Compositional analysis of per-layer attention: word selection, phrase spans,
distribution statistics, gate summaries and heatmaps."""

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

DEFAULT_THRESHOLD = 0.95
SHADE_RAMP = " .:*#"


@dataclass
class AttentionRecord:
    """Attention and gate captures for one sentence.

    ``attention`` is (L, N) over real tokens. ``gates`` is (L - 1, d):
    row ``i`` belongs to layer ``i + 1`` because layer 0 has no gate.
    """

    tokens: List[str]
    attention: np.ndarray
    gates: Optional[np.ndarray] = None
    prediction: Optional[int] = None
    gold: Optional[int] = None

    def __post_init__(self):
        self.attention = np.asarray(self.attention, dtype=np.float64)
        if self.attention.ndim != 2 or self.attention.shape[1] != len(self.tokens):
            raise ValueError(
                f"attention shape {self.attention.shape} inconsistent with {len(self.tokens)} tokens"
            )
        if self.gates is not None:
            self.gates = np.asarray(self.gates, dtype=np.float64)
            if self.gates.shape[0] != self.n_layers - 1:
                raise ValueError(f"{self.gates.shape[0]} gate rows for {self.n_layers} layers")

    @property
    def n_layers(self):
        return self.attention.shape[0]

    def gate_means(self):
        if self.gates is None:
            return None
        return self.gates.mean(axis=1)

    def to_json(self, full_gates=False):
        doc = {
            "tokens": list(self.tokens),
            "attention": self.attention.tolist(),
            "gate_mean": None if self.gates is None else self.gate_means().tolist(),
            "prediction": self.prediction,
            "gold": self.gold,
        }
        if full_gates and self.gates is not None:
            doc["gates"] = self.gates.tolist()
        return json.dumps(doc, ensure_ascii=False)

    @classmethod
    def from_json(cls, line):
        doc = json.loads(line)
        return cls(doc["tokens"], np.array(doc["attention"]), doc.get("gates"), doc["prediction"], doc["gold"])


def records_from_forward(forward_record, mask, tokens, predictions=None, golds=None):
    """Split a batched forward capture into per-sentence records (real tokens only)."""
    out = []
    mask = np.asarray(mask, dtype=bool)
    attention = np.stack(forward_record.attention, axis=1)  # (b, L, N)
    gates = np.stack(forward_record.gates, axis=1) if forward_record.gates else None
    for b, toks in enumerate(tokens):
        n = int(mask[b].sum())
        out.append(
            AttentionRecord(
                list(toks),
                attention[b, :, :n].copy(),
                None if gates is None else gates[b].copy(),
                None if predictions is None else int(predictions[b]),
                None if golds is None else int(golds[b]),
            )
        )
    return out


def normalize_attention(record_or_matrix) -> np.ndarray:
    """Min-max scale each layer's weights over the sentence; constant rows become 0."""
    att = getattr(record_or_matrix, "attention", record_or_matrix)
    att = np.asarray(att, dtype=np.float64)
    lo = att.min(axis=-1, keepdims=True)
    span = att.max(axis=-1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (att - lo) / safe, 0.0)


@dataclass(frozen=True)
class PhraseSpan:
    layer: int
    start: int
    end: int
    text: tuple = ()

    @property
    def length(self):
        return self.end - self.start


def _runs(selected):
    """Maximal runs of True as half-open (start, end) pairs."""
    runs = []
    start = None
    for i, s in enumerate(selected):
        if s and start is None:
            start = i
        elif not s and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(selected)))
    return runs


def select_and_compose(normalized, threshold=DEFAULT_THRESHOLD, tokens=None) -> List[PhraseSpan]:
    """Tokens above ``threshold`` are selected; consecutive selected tokens form one span."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    normalized = np.atleast_2d(np.asarray(normalized, dtype=np.float64))
    spans = []
    for layer, row in enumerate(normalized):
        for start, end in _runs(row > threshold):
            text = tuple(tokens[start:end]) if tokens is not None else ()
            spans.append(PhraseSpan(layer, start, end, text))
    return spans


def median_relaxed_select(row) -> set:
    """Indices whose value is strictly above the row median."""
    row = np.asarray(row, dtype=np.float64)
    med = np.median(row)
    return {int(i) for i in np.flatnonzero(row > med)}


@dataclass
class LayerPhraseStats:
    histogram: Counter = field(default_factory=Counter)
    mean_length: float = 0.0
    empty: bool = True


def phrase_length_distribution(records: Sequence[AttentionRecord], threshold=DEFAULT_THRESHOLD):
    if not records:
        raise ValueError("phrase_length_distribution: no records")
    n_layers = max(r.n_layers for r in records)
    hists = [Counter() for _ in range(n_layers)]
    for r in records:
        for span in select_and_compose(normalize_attention(r), threshold):
            hists[span.layer][span.length] += 1
    stats = []
    for h in hists:
        total = sum(h.values())
        mean = sum(k * v for k, v in h.items()) / total if total else 0.0
        stats.append(LayerPhraseStats(h, mean, total == 0))
    return stats


@dataclass
class Spikiness:
    high: np.ndarray  # fraction >= 0.95 per layer
    low: np.ndarray  # fraction <= 0.05 per layer


def attention_spikiness(records: Sequence[AttentionRecord], high=0.95, low=0.05) -> Spikiness:
    """Pooled over every real token of every record, per layer."""
    if not records:
        raise ValueError("attention_spikiness: no records")
    pooled = np.concatenate([normalize_attention(r) for r in records], axis=1)
    return Spikiness((pooled >= high).mean(axis=1), (pooled <= low).mean(axis=1))


@dataclass
class GateStats:
    layer: int
    mean: float
    p10: float
    p50: float
    p90: float


def gate_activity_summary(records: Sequence[AttentionRecord]) -> List[GateStats]:
    """Order statistics over all instances and gate components, one row per gated layer."""
    if any(r.gates is None for r in records):
        raise ValueError("gate_activity_summary needs records captured with full gate vectors")
    if not records or records[0].gates.shape[0] == 0:
        return []
    stacked = np.concatenate([r.gates for r in records], axis=1)  # (L-1, sum d)
    out = []
    for i, values in enumerate(stacked):
        p10, p50, p90 = np.percentile(values, [10, 50, 90])
        out.append(GateStats(i + 1, float(values.mean()), float(p10), float(p50), float(p90)))
    return out


def shade_char(weight):
    level = min(int(weight * len(SHADE_RAMP)), len(SHADE_RAMP) - 1)
    return SHADE_RAMP[max(level, 0)]


def heatmap_text(record: AttentionRecord, normalized=None) -> str:
    if normalized is None:
        normalized = normalize_attention(record)
    width = max(len(t) for t in record.tokens)
    width = max(width, 1)
    label_w = len(f"L{record.n_layers}")
    lines = [" " * label_w + " " + " ".join(t.rjust(width) for t in record.tokens)]
    for l, row in enumerate(normalized):
        cells = " ".join((shade_char(w) * width) for w in row)
        lines.append(f"L{l + 1}".rjust(label_w) + " " + cells)
    return "\n".join(lines) + "\n"


def _fill(weight):
    # white (0) to dark blue (1), monotone per channel
    r = int(round(255 - 255 * weight))
    g = int(round(255 - 200 * weight))
    b = int(round(255 - 115 * weight))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(record: AttentionRecord, normalized=None, cell=28) -> str:
    if normalized is None:
        normalized = normalize_attention(record)
    n_layers, n_tokens = normalized.shape
    left, top = 40, 70
    w = left + n_tokens * cell + 10
    h = top + n_layers * cell + 10
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        '<g font-family="monospace" font-size="11">',
    ]
    for n, tok in enumerate(record.tokens):
        x = left + n * cell + cell // 2
        parts.append(
            f'<text x="{x}" y="{top - 6}" transform="rotate(-45 {x} {top - 6})">{escape(tok)}</text>'
        )
    for l in range(n_layers):
        y = top + l * cell
        parts.append(f'<text x="4" y="{y + cell // 2 + 4}">L{l + 1}</text>')
        for n in range(n_tokens):
            wgt = float(normalized[l, n])
            parts.append(
                f'<rect class="cell" x="{left + n * cell}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_fill(wgt)}" stroke="#cccccc"><title>{wgt:.4f}</title></rect>'
            )
    parts += ["</g>", "</svg>"]
    return "\n".join(parts) + "\n"


def render_heatmap(record: AttentionRecord, normalized=None, svg_path=None, text_path=None):
    """Return ``(svg, text)``; write them to the given paths when provided."""
    if normalized is None:
        normalized = normalize_attention(record)
    svg = heatmap_svg(record, normalized)
    text = heatmap_text(record, normalized)
    if svg_path is not None:
        with open(svg_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(svg)
    if text_path is not None:
        with open(text_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return svg, text


def top_selected_words(records: Iterable[AttentionRecord], layer=0, threshold=DEFAULT_THRESHOLD, k=10):
    """Most frequent selected words at one layer (e.g. negation words at the bottom layer)."""
    counts = Counter()
    for r in records:
        row = normalize_attention(r)[layer]
        for i in np.flatnonzero(row > threshold):
            counts[r.tokens[i].lower()] += 1
    return counts.most_common(k)


def phrase_histogram_tsv(stats: Sequence[LayerPhraseStats]) -> str:
    lines = ["layer\tlength\tcount"]
    for l, s in enumerate(stats):
        for length in sorted(s.histogram):
            lines.append(f"{l + 1}\t{length}\t{s.histogram[length]}")
    lines.append("")
    lines.append("layer\tmean_length\tempty")
    for l, s in enumerate(stats):
        lines.append(f"{l + 1}\t{s.mean_length:.6f}\t{int(s.empty)}")
    return "\n".join(lines) + "\n"


def spikiness_tsv(sp: Spikiness) -> str:
    lines = ["layer\tfrac_high\tfrac_low"]
    for l, (hi, lo) in enumerate(zip(sp.high, sp.low)):
        lines.append(f"{l + 1}\t{hi:.6f}\t{lo:.6f}")
    return "\n".join(lines) + "\n"


def gate_summary_tsv(stats: Sequence[GateStats]) -> str:
    lines = ["layer\tmean\tp10\tp50\tp90"]
    for s in stats:
        lines.append(f"{s.layer + 1}\t{s.mean:.6f}\t{s.p10:.6f}\t{s.p50:.6f}\t{s.p90:.6f}")
    return "\n".join(lines) + "\n"
