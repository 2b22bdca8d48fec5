"""The five cube-vertex architectures and their shared forward/backward pass.

Every network is built from the same per-stream template: five conv stages
(kernel sizes 7, 5, 3, 1, 1, each followed by ReLU and 2x2 max-pool), then
flatten, concat across streams, one hidden fully-connected layer with ReLU,
and a final linear classifier.

Vertices:
  V1  single stream, base filter counts, whole image input
  V5  single wide stream (all filter counts multiplied), whole image
  V6  N independent template streams, every stream fed the whole image
  V7  single wide stream fed all intensity slices stacked channel-wise
  V8  N independent streams, stream i fed intensity slice i

Streams never share parameters: every parameter id occurs in exactly one
stream (or the head), which is what makes per-stream gradients independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .slicing import SliceSpec, extract_slice

KERNEL_SIZES = (7, 5, 3, 1, 1)
PADDINGS = (3, 2, 1, 0, 0)  # "same" padding for stride-1 convs
VERTICES = ("V1", "V5", "V6", "V7", "V8")


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative description of one cube-vertex architecture."""

    vertex: str
    input_shape: tuple  # (c, h, w)
    n_classes: int
    n_streams: int = 1
    width_multiplier: int = 1
    slice_spec: SliceSpec | None = None
    conv5_filters: int | None = None  # None -> n_classes
    fc_hidden: int = 64
    base_filters: tuple = (32, 64, 128, 256)
    slice_membership: str = "per_channel"
    seed: int = 0

    def __post_init__(self):
        if self.vertex not in VERTICES:
            raise ValueError(f"unknown vertex {self.vertex!r}, expected one of {VERTICES}")
        if len(self.input_shape) != 3:
            raise ValueError(f"input_shape must be (c, h, w), got {self.input_shape}")
        if len(self.base_filters) != 4:
            raise ValueError("base_filters must list the first four conv filter counts")
        if self.n_streams < 1 or self.width_multiplier < 1:
            raise ValueError("n_streams and width_multiplier must be >= 1")

    @property
    def conv5(self) -> int:
        return self.n_classes if self.conv5_filters is None else self.conv5_filters

    def stream_filters(self) -> tuple:
        """Per-stream conv filter counts; wide vertices scale every stage."""
        mult = self.width_multiplier if self.vertex in ("V5", "V7") else 1
        return tuple(f * mult for f in self.base_filters) + (self.conv5 * mult,)

    def stream_in_channels(self) -> int:
        c = self.input_shape[0]
        if self.vertex == "V7":
            return c * self.slice_spec.n_slices
        return c

    def to_dict(self) -> dict:
        d = {
            "vertex": self.vertex,
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "n_streams": self.n_streams,
            "width_multiplier": self.width_multiplier,
            "slice_boundaries": (None if self.slice_spec is None
                                 else list(self.slice_spec.boundaries)),
            "conv5_filters": self.conv5_filters,
            "fc_hidden": self.fc_hidden,
            "base_filters": list(self.base_filters),
            "slice_membership": self.slice_membership,
            "seed": self.seed,
        }
        return d

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        bounds = d.get("slice_boundaries")
        return NetworkSpec(
            vertex=d["vertex"],
            input_shape=tuple(d["input_shape"]),
            n_classes=d["n_classes"],
            n_streams=d["n_streams"],
            width_multiplier=d["width_multiplier"],
            slice_spec=None if bounds is None else SliceSpec(tuple(bounds)),
            conv5_filters=d["conv5_filters"],
            fc_hidden=d["fc_hidden"],
            base_filters=tuple(d["base_filters"]),
            slice_membership=d.get("slice_membership", "per_channel"),
            seed=d["seed"],
        )


@dataclass
class ParamTensor:
    """A trainable array plus its gradient buffer, keyed by a stable id."""

    id: str
    value: np.ndarray
    grad: np.ndarray | None = None

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def add_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g


@dataclass
class ConvStage:
    weight: ParamTensor
    bias: ParamTensor
    padding: int


@dataclass
class Head:
    fc_weight: ParamTensor
    fc_bias: ParamTensor
    out_weight: ParamTensor
    out_bias: ParamTensor


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Network:
    """Instantiated layer graph for one NetworkSpec.

    ``params`` maps stable ids to ParamTensors in a fixed traversal order
    (stream 0 first conv stage first, head last), which fixes the
    initialization sequence and the checkpoint layout.
    """

    def __init__(self, spec: NetworkSpec):
        spec = _validated(spec)
        self.spec = spec
        self.params: dict[str, ParamTensor] = {}
        rng = np.random.default_rng(spec.seed)

        filters = spec.stream_filters()
        in_c = spec.stream_in_channels()
        self.streams: list[list[ConvStage]] = []
        for s in range(spec.n_streams):
            stages = []
            prev = in_c
            for l, (count, k, pad) in enumerate(zip(filters, KERNEL_SIZES, PADDINGS), 1):
                fan_in = prev * k * k
                w = self._param(f"s{s}.conv{l}.weight",
                                _he_uniform(rng, (count, prev, k, k), fan_in))
                b = self._param(f"s{s}.conv{l}.bias", np.zeros(count))
                stages.append(ConvStage(w, b, pad))
                prev = count
            self.streams.append(stages)

        d_cat = spec.n_streams * self._stream_feature_dim()
        fc_w = self._param("head.fc.weight",
                           _he_uniform(rng, (d_cat, spec.fc_hidden), d_cat))
        fc_b = self._param("head.fc.bias", np.zeros(spec.fc_hidden))
        out_w = self._param("head.out.weight",
                            _he_uniform(rng, (spec.fc_hidden, spec.n_classes),
                                        spec.fc_hidden))
        out_b = self._param("head.out.bias", np.zeros(spec.n_classes))
        self.head = Head(fc_w, fc_b, out_w, out_b)

    def _param(self, pid: str, value: np.ndarray) -> ParamTensor:
        if pid in self.params:
            raise ValueError(f"duplicate parameter id {pid!r}")
        p = ParamTensor(pid, np.asarray(value, dtype=np.float64))
        self.params[pid] = p
        return p

    def _stream_feature_dim(self) -> int:
        _, h, w = self.spec.input_shape
        for _ in KERNEL_SIZES:
            h, w = (h + 1) // 2, (w + 1) // 2
        return self.spec.stream_filters()[-1] * h * w

    # -- routing ------------------------------------------------------------

    def route(self, batch: np.ndarray) -> list:
        """Per-stream inputs for a (n, c, h, w) batch of whole images."""
        spec = self.spec
        if spec.vertex == "V8":
            return [extract_slice(batch, spec.slice_spec, i, spec.slice_membership)
                    for i in range(spec.n_streams)]
        if spec.vertex == "V7":
            slices = [extract_slice(batch, spec.slice_spec, i, spec.slice_membership)
                      for i in range(spec.slice_spec.n_slices)]
            return [np.concatenate(slices, axis=1)]
        return [batch] * spec.n_streams

    # -- forward / backward ---------------------------------------------------

    def stream_forward(self, s: int, x: np.ndarray, keep: bool = False):
        """Run stream ``s`` on its already-routed input; returns (features, caches)."""
        caches = []
        for stage in self.streams[s]:
            x, conv_cache = T.conv2d(x, stage.weight.value, stage.bias.value,
                                     stage.padding)
            x, relu_cache = T.relu(x)
            x, pool_cache = T.maxpool2x2(x)
            if keep:
                caches.append((conv_cache, relu_cache, pool_cache))
        return T.flatten(x), caches

    def forward(self, batch: np.ndarray, mode: str = "eval") -> np.ndarray:
        """Logits (n, n_classes) for a batch of images with values in [0, 1].

        ``mode`` is part of the interface for symmetry with training; no
        layer here behaves differently between train and eval, so both modes
        compute the same result. Use loss_and_gradients() to train.
        """
        logits, _ = self._forward(batch, keep=False)
        return logits

    def _forward(self, batch: np.ndarray, keep: bool):
        batch = T.as_tensor(batch)
        c, h, w = self.spec.input_shape
        if batch.ndim != 4 or batch.shape[1:] != (c, h, w):
            raise T.ShapeError(f"expected batch shaped (n, {c}, {h}, {w}), "
                               f"got {batch.shape}")
        feats, stream_caches = [], []
        for s, x in enumerate(self.route(batch)):
            f, caches = self.stream_forward(s, x, keep=keep)
            feats.append(f)
            stream_caches.append(caches)
        cat = np.concatenate(feats, axis=1)
        hhid, fc_cache = T.linear(cat, self.head.fc_weight.value,
                                  self.head.fc_bias.value)
        hact, relu_cache = T.relu(hhid)
        logits, out_cache = T.linear(hact, self.head.out_weight.value,
                                     self.head.out_bias.value)
        ctx = (stream_caches, fc_cache, relu_cache, out_cache,
               [f.shape[1] for f in feats]) if keep else None
        return logits, ctx

    def loss_and_gradients(self, batch: np.ndarray, labels: np.ndarray):
        """Mean cross-entropy loss; accumulates parameter gradients.

        Call zero_grad() first for fresh gradients. Returns (loss, probs).
        """
        logits, ctx = self._forward(batch, keep=True)
        loss, probs, grad_logits = T.softmax_cross_entropy(logits, labels)
        self._backward(ctx, grad_logits)
        return loss, probs

    def _backward(self, ctx, grad_logits: np.ndarray):
        stream_caches, fc_cache, relu_cache, out_cache, widths = ctx
        g, gw, gb = T.linear_backward(out_cache, grad_logits)
        self.head.out_weight.add_grad(gw)
        self.head.out_bias.add_grad(gb)
        g = T.relu_backward(relu_cache, g)
        g, gw, gb = T.linear_backward(fc_cache, g)
        self.head.fc_weight.add_grad(gw)
        self.head.fc_bias.add_grad(gb)
        offset = 0
        for s, caches in enumerate(stream_caches):
            gs = g[:, offset:offset + widths[s]]
            offset += widths[s]
            self._stream_backward(s, caches, gs)

    def _stream_backward(self, s: int, caches, grad_feat: np.ndarray):
        pool_cache_last = caches[-1][2]
        n = grad_feat.shape[0]
        oh, ow = pool_cache_last[1].shape[2], pool_cache_last[1].shape[3]
        g = grad_feat.reshape(n, -1, oh, ow)
        for l in range(len(caches) - 1, -1, -1):
            stage = self.streams[s][l]
            conv_cache, relu_cache, pool_cache = caches[l]
            g = T.maxpool2x2_backward(pool_cache, g)
            g = T.relu_backward(relu_cache, g)
            # stage 0 reads the raw image; nothing upstream needs its gradient
            g, gw, gb = T.conv2d_backward(conv_cache, g, need_grad_input=l > 0)
            stage.weight.add_grad(gw)
            stage.bias.add_grad(gb)

    # -- bookkeeping ----------------------------------------------------------

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def stream_param_ids(self, s: int) -> set:
        return {p.id for stage in self.streams[s] for p in (stage.weight, stage.bias)}

    def first_conv_weights(self) -> list:
        """conv1 weight arrays, one per stream."""
        return [self.streams[s][0].weight.value for s in range(self.spec.n_streams)]

    def head_block_slice(self, s: int) -> slice:
        """Columns of the concat feature vector produced by stream ``s``."""
        d = self._stream_feature_dim()
        return slice(s * d, (s + 1) * d)


def _validated(spec: NetworkSpec) -> NetworkSpec:
    v = spec.vertex
    if v in ("V7", "V8") and spec.slice_spec is None:
        raise ValueError(f"{v} requires a slice_spec")
    if v == "V8" and spec.n_streams != spec.slice_spec.n_slices:
        raise ValueError(f"V8 needs one stream per slice: {spec.n_streams} streams "
                         f"vs {spec.slice_spec.n_slices} slices")
    if v in ("V1", "V5", "V7") and spec.n_streams != 1:
        raise ValueError(f"{v} is a single-stream architecture")
    if v in ("V1", "V6") and spec.width_multiplier != 1:
        raise ValueError(f"{v} does not take a width multiplier")
    return spec


def build_network(spec: NetworkSpec) -> Network:
    """Instantiate the architecture for any of the five vertices."""
    return Network(spec)


def parameter_count(spec: NetworkSpec) -> int:
    """Closed-form trainable parameter count for a spec (no allocation)."""
    filters = spec.stream_filters()
    in_c = spec.stream_in_channels()
    per_stream = 0
    prev = in_c
    for count, k in zip(filters, KERNEL_SIZES):
        per_stream += count * (prev * k * k + 1)
        prev = count
    c, h, w = spec.input_shape
    for _ in KERNEL_SIZES:
        h, w = (h + 1) // 2, (w + 1) // 2
    d_cat = spec.n_streams * filters[-1] * h * w
    head = (d_cat + 1) * spec.fc_hidden + (spec.fc_hidden + 1) * spec.n_classes
    return spec.n_streams * per_stream + head
