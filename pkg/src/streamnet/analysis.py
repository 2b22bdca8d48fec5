"""First-conv-layer weight distribution analysis.

Bins the filter weights of every stream's first conv layer into a shared
histogram and measures how far the distribution sits from discrete uniform
via KL divergence (natural log, additive smoothing). Comparisons only make
sense over identical bin grids, so reports compute one shared symmetric
range across all compared networks and refuse mismatched grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .networks import Network


@dataclass(frozen=True)
class Histogram:
    """Counts over strictly increasing edges; final bin is right-closed."""

    bin_edges: tuple
    counts: tuple

    def __post_init__(self):
        if len(self.bin_edges) != len(self.counts) + 1:
            raise ValueError("need exactly one more edge than bins")

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    @property
    def n_bins(self) -> int:
        return len(self.counts)


def collect_first_layer_weights(net: Network, channel: int) -> np.ndarray:
    """All conv1 weights reading input channel ``channel``, across all streams."""
    weights = net.first_conv_weights()
    in_c = weights[0].shape[1]
    if not 0 <= channel < in_c:
        raise IndexError(f"channel {channel} out of range [0, {in_c})")
    return np.concatenate([w[:, channel].ravel() for w in weights])


def collect_color_weights(net: Network, color: int) -> np.ndarray:
    """conv1 weights for one image color, pooling slice-packed channels.

    Streams fed channel-stacked slices store color ``color`` at every input
    channel congruent to it modulo the image channel count.
    """
    c = net.spec.input_shape[0]
    if not 0 <= color < c:
        raise IndexError(f"color {color} out of range [0, {c})")
    parts = []
    for w in net.first_conv_weights():
        for ch in range(w.shape[1]):
            if ch % c == color:
                parts.append(w[:, ch].ravel())
    return np.concatenate(parts)


def collect_all_weights(net: Network) -> np.ndarray:
    """Every conv1 weight of every stream, flattened."""
    return np.concatenate([w.ravel() for w in net.first_conv_weights()])


def histogram(values, bins: int, value_range: tuple) -> Histogram:
    """Left-closed right-open bins over ``value_range``; final bin right-closed."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot histogram an empty value list")
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    lo, hi = float(value_range[0]), float(value_range[1])
    if not lo < hi:
        raise ValueError(f"invalid range [{lo}, {hi}]")
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return Histogram(tuple(edges.tolist()), tuple(int(c) for c in counts))


def kl_divergence(hist: Histogram, smoothing: float = 1.0) -> float:
    """KL divergence of the smoothed bin distribution from discrete uniform.

    p_i = (count_i + a) / (total + a*B), q_i = 1/B, natural log.
    """
    if smoothing <= 0:
        raise ValueError(f"smoothing must be positive, got {smoothing}")
    counts = np.asarray(hist.counts, dtype=np.float64)
    b = counts.size
    p = (counts + smoothing) / (counts.sum() + smoothing * b)
    return float(np.sum(p * np.log(p * b)))


def kl_between(p_hist: Histogram, q_hist: Histogram, smoothing: float = 1.0) -> float:
    """KL(p || q) between two histograms on the identical bin grid."""
    if p_hist.bin_edges != q_hist.bin_edges:
        raise ValueError("histograms use different bin grids; refusing to compare")
    if smoothing <= 0:
        raise ValueError(f"smoothing must be positive, got {smoothing}")
    b = p_hist.n_bins
    p = (np.asarray(p_hist.counts, float) + smoothing) / (p_hist.total + smoothing * b)
    q = (np.asarray(q_hist.counts, float) + smoothing) / (q_hist.total + smoothing * b)
    return float(np.sum(p * np.log(p / q)))


@dataclass(frozen=True)
class KLRow:
    tag: str
    channel: str  # "0", "1", ... or "all"
    bins: int
    alpha: float
    kl: float
    n_values: int


@dataclass
class KLReport:
    """Per-network, per-channel divergences on one shared bin grid."""

    value_range: tuple
    bins: int
    alpha: float
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["tag,channel,bins,alpha,kl"]
        for r in self.rows:
            lines.append(f"{r.tag},{r.channel},{r.bins},{r.alpha:.17g},{r.kl:.17g}")
        return "\n".join(lines) + "\n"

    def lookup(self, tag: str, channel: str) -> float:
        for r in self.rows:
            if r.tag == tag and r.channel == channel:
                return r.kl
        raise KeyError(f"no row for tag={tag!r} channel={channel!r}")


def diversity_report(nets: list, bins: int = 50, alpha: float = 1.0,
                     per_stream: bool = True) -> KLReport:
    """Compare first-layer weight distributions of several (tag, Network) pairs.

    All histograms share one symmetric range [-a, a] with a the largest
    absolute conv1 weight across the compared networks. Multi-stream networks
    additionally get per-stream rows (tag/s{i}) so individual streams can be
    compared against single-stream nets.
    """
    if len(nets) < 2:
        raise ValueError("diversity report needs at least two networks")
    colors = {net.spec.input_shape[0] for _, net in nets}
    if len(colors) != 1:
        raise ValueError(f"mixed image channel counts {sorted(colors)}; "
                         "refusing mixed-range comparison")
    n_colors = colors.pop()
    a = max(float(np.max(np.abs(collect_all_weights(net)))) for _, net in nets)
    rng = (-a, a)
    report = KLReport(rng, bins, alpha)

    def add(tag: str, channel: str, values: np.ndarray):
        h = histogram(values, bins, rng)
        report.rows.append(KLRow(tag, channel, bins, alpha,
                                 kl_divergence(h, alpha), values.size))

    for tag, net in nets:
        for color in range(n_colors):
            add(tag, str(color), collect_color_weights(net, color))
        add(tag, "all", collect_all_weights(net))
        if per_stream and net.spec.n_streams > 1:
            for s, w in enumerate(net.first_conv_weights()):
                add(f"{tag}/s{s}", "all", w.ravel())
    return report


def histogram_csv(net: Network, bins: int, value_range: tuple) -> str:
    """Per-channel histogram rows for plotting: channel,bin_lo,bin_hi,count."""
    lines = ["channel,bin_lo,bin_hi,count"]
    n_colors = net.spec.input_shape[0]
    groups = [(str(color), collect_color_weights(net, color))
              for color in range(n_colors)]
    groups.append(("all", collect_all_weights(net)))
    for name, values in groups:
        h = histogram(values, bins, value_range)
        for i, count in enumerate(h.counts):
            lines.append(f"{name},{h.bin_edges[i]:.17g},{h.bin_edges[i + 1]:.17g},{count}")
    return "\n".join(lines) + "\n"
