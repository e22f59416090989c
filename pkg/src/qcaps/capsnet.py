"""Capsule layer graph, routing-by-agreement, and quantized evaluation.

Activation layout conventions (all float64, row-major):
  - plain feature maps:   [C, H, W]
  - capsule feature maps: [T, H, W, D]   (T capsule types, D capsule dim)
  - capsule lists:        [N, D]
Capsules flatten in (type, row, col) order; channels fold as c = t*D + d.
These orderings are load-bearing: the weight blob format and stochastic
rounding draw order both depend on them.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fixedpoint import (FixedPointFormat, Quantizer, RandomStream,
                         RoundingScheme)
from .ops import capsule_affine, conv2d, l2_norm_lastdim, relu


class LayerKind(enum.Enum):
    CONV = "conv"
    PRIMARY_CAPS = "primary_caps"
    CONV_CAPS = "conv_caps"
    FC_CAPS = "fc_caps"


_CONV_LIKE = (LayerKind.CONV, LayerKind.PRIMARY_CAPS, LayerKind.CONV_CAPS)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the graph. `sources` lists input layer indices
    (-1 = network input); empty means "previous layer"."""

    kind: LayerKind
    name: str = ""
    kernel: int = 1
    stride: int = 1
    out_channels: int = 0      # CONV only
    caps_types: int = 0        # PRIMARY_CAPS / CONV_CAPS
    num_caps_out: int = 0      # FC_CAPS
    d_out: int = 0             # capsule dimension produced
    uses_dynamic_routing: bool = False
    routing_iterations: int = 3
    has_bias: bool = True
    sources: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.uses_dynamic_routing and self.kind not in (LayerKind.CONV_CAPS,
                                                           LayerKind.FC_CAPS):
            raise ValueError(f"{self.kind.value} layer cannot use dynamic routing")
        if self.kind is LayerKind.FC_CAPS and not self.uses_dynamic_routing:
            raise ValueError("fully-connected capsule layers route by agreement; "
                             "set uses_dynamic_routing=True")
        if self.routing_iterations < 1:
            raise ValueError("routing_iterations must be >= 1")
        if self.kind in _CONV_LIKE and (self.kernel < 1 or self.stride < 1):
            raise ValueError(f"bad kernel/stride for {self.name or self.kind.value}")
        if self.kind is LayerKind.CONV and self.out_channels < 1:
            raise ValueError("conv layer needs out_channels >= 1")
        if self.kind in (LayerKind.PRIMARY_CAPS, LayerKind.CONV_CAPS):
            if self.caps_types < 1 or self.d_out < 1:
                raise ValueError(f"capsule conv layer needs caps_types and d_out")
        if self.kind is LayerKind.FC_CAPS and (self.num_caps_out < 1 or self.d_out < 1):
            raise ValueError("fc caps layer needs num_caps_out and d_out")
        if self.has_bias and (self.uses_dynamic_routing or self.kind is LayerKind.FC_CAPS):
            raise ValueError("routing layers carry no bias term")
        object.__setattr__(self, "sources", tuple(int(s) for s in self.sources))


def _hw_out(h: int, w: int, k: int, stride: int, name: str) -> tuple[int, int]:
    if k > h or k > w:
        raise ValueError(f"layer {name}: kernel {k} exceeds input {h}x{w}")
    return (h - k) // stride + 1, (w - k) // stride + 1


def _channels_of(shape: tuple[int, ...]) -> tuple[int, int, int]:
    """Any spatial activation viewed as [C, H, W]."""
    if len(shape) == 3:
        return shape
    if len(shape) == 4:
        t, h, w, d = shape
        return (t * d, h, w)
    raise ValueError(f"expected a spatial activation, got shape {shape}")


def _caps_count(shape: tuple[int, ...]) -> tuple[int, int]:
    """Any capsule activation viewed as [N, D]."""
    if len(shape) == 2:
        return shape
    if len(shape) == 4:
        t, h, w, d = shape
        return (t * h * w, d)
    raise ValueError(f"expected a capsule activation, got shape {shape}")


class CapsModel:
    """Immutable layer graph with FP32-valued weights.

    Construction propagates shapes once, records every layer's output
    shape, parameter count and activation element count, and validates
    any supplied weights against the expected shapes.
    """

    def __init__(self, layers: Sequence[LayerSpec], input_shape: Sequence[int],
                 num_classes: int,
                 weights: Sequence[np.ndarray] | None = None,
                 biases: Sequence[np.ndarray | None] | None = None,
                 name: str = "custom"):
        self.layers = list(layers)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.num_classes = int(num_classes)
        self.name = name
        if len(self.layers) < 2:
            raise ValueError("a capsule model needs at least 2 layers")
        if len(self.input_shape) != 3:
            raise ValueError(f"input shape must be [C, H, W], got {self.input_shape}")

        self.output_shapes: list[tuple[int, ...]] = []
        self.weight_shapes: list[tuple[int, ...]] = []
        self.bias_shapes: list[tuple[int, ...] | None] = []
        for idx, spec in enumerate(self.layers):
            in_shape = self._merged_input_shape(idx, spec)
            out_shape, w_shape, b_shape = self._plan_layer(spec, in_shape)
            self.output_shapes.append(out_shape)
            self.weight_shapes.append(w_shape)
            self.bias_shapes.append(b_shape)

        last = self.output_shapes[-1]
        if len(last) != 2 or last[0] != self.num_classes:
            raise ValueError(f"final layer must emit one capsule per class "
                             f"({self.num_classes}), got shape {last}")

        self.weights = self._take_tensors(weights, self.weight_shapes, "weight")
        self.biases = self._take_tensors(biases, self.bias_shapes, "bias")

        self.param_counts = [
            int(np.prod(w)) + (int(np.prod(b)) if b is not None else 0)
            for w, b in zip(self.weight_shapes, self.bias_shapes)
        ]
        self.activation_counts = [int(np.prod(s)) for s in self.output_shapes]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def routing_layers(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.layers) if s.uses_dynamic_routing)

    def layer_sources(self, idx: int) -> tuple[int, ...]:
        spec = self.layers[idx]
        return spec.sources if spec.sources else (idx - 1,)

    def with_weights(self, weights: Sequence[np.ndarray],
                     biases: Sequence[np.ndarray | None]) -> "CapsModel":
        return CapsModel(self.layers, self.input_shape, self.num_classes,
                         weights=weights, biases=biases, name=self.name)

    def _merged_input_shape(self, idx: int, spec: LayerSpec) -> tuple[int, ...]:
        shapes = []
        for src in (spec.sources if spec.sources else (idx - 1,)):
            if src == -1:
                shapes.append(self.input_shape)
            elif 0 <= src < idx:
                shapes.append(self.output_shapes[src])
            else:
                raise ValueError(f"layer {spec.name or idx}: bad source index {src}")
        if len(shapes) == 1:
            return shapes[0]
        if any(len(s) != 4 for s in shapes):
            raise ValueError(f"layer {spec.name or idx}: only capsule maps can merge")
        t0, h0, w0, d0 = shapes[0]
        for s in shapes[1:]:
            if s[1:] != (h0, w0, d0):
                raise ValueError(f"layer {spec.name or idx}: merge shapes differ "
                                 f"{shapes[0]} vs {s}")
        return (sum(s[0] for s in shapes), h0, w0, d0)

    def _plan_layer(self, spec: LayerSpec, in_shape: tuple[int, ...]):
        name = spec.name or spec.kind.value
        if spec.kind is LayerKind.CONV:
            c, h, w = _channels_of(in_shape)
            ho, wo = _hw_out(h, w, spec.kernel, spec.stride, name)
            return ((spec.out_channels, ho, wo),
                    (spec.out_channels, c, spec.kernel, spec.kernel),
                    (spec.out_channels,) if spec.has_bias else None)
        if spec.kind in (LayerKind.PRIMARY_CAPS, LayerKind.CONV_CAPS) \
                and not spec.uses_dynamic_routing:
            c, h, w = _channels_of(in_shape)
            ho, wo = _hw_out(h, w, spec.kernel, spec.stride, name)
            ch = spec.caps_types * spec.d_out
            return ((spec.caps_types, ho, wo, spec.d_out),
                    (ch, c, spec.kernel, spec.kernel),
                    (ch,) if spec.has_bias else None)
        if spec.kind is LayerKind.CONV_CAPS:  # routing variant
            if len(in_shape) != 4:
                raise ValueError(f"layer {name}: routing conv caps needs a capsule map")
            t, h, w, d = in_shape
            ho, wo = _hw_out(h, w, spec.kernel, spec.stride, name)
            n_win = t * spec.kernel * spec.kernel
            return ((spec.caps_types, ho, wo, spec.d_out),
                    (n_win, spec.caps_types, spec.d_out, d),
                    None)
        # FC_CAPS
        n_in, d_in = _caps_count(in_shape)
        return ((spec.num_caps_out, spec.d_out),
                (n_in, spec.num_caps_out, spec.d_out, d_in),
                None)

    def _take_tensors(self, given, expected_shapes, role):
        out = []
        for idx, shape in enumerate(expected_shapes):
            if shape is None:
                if given is not None and given[idx] is not None:
                    raise ValueError(f"layer {idx} takes no {role}")
                out.append(None)
                continue
            if given is None:
                out.append(np.zeros(shape, dtype=np.float64))
                continue
            t = np.asarray(given[idx], dtype=np.float64)
            if t.shape != tuple(shape):
                raise ValueError(f"layer {idx} {role} shape {t.shape} != expected {tuple(shape)}")
            out.append(t)
        return out


def randomize_weights(model: CapsModel, seed: int, scale: float = 0.05) -> CapsModel:
    """Gaussian re-initialization (values exactly representable in FP32,
    so a save/load round trip is bit-identical)."""
    gen = np.random.default_rng(seed)
    weights = [
        (gen.standard_normal(s) * scale).astype(np.float32).astype(np.float64)
        for s in model.weight_shapes
    ]
    biases = [None if s is None else np.zeros(s) for s in model.bias_shapes]
    return model.with_weights(weights, biases)


@dataclass(frozen=True)
class QuantConfig:
    """Per-layer fractional wordlengths plus the rounding scheme.

    All formats share a fixed 1-bit integer part, so a layer quantized
    at q fractional bits costs 1+q bits per stored value. `q_dr` holds
    the routing-internal wordlength for each routing layer.
    """

    scheme: RoundingScheme
    q_w: tuple[int, ...]
    q_a: tuple[int, ...]
    q_dr: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "q_w", tuple(int(v) for v in self.q_w))
        object.__setattr__(self, "q_a", tuple(int(v) for v in self.q_a))
        dr = self.q_dr.items() if isinstance(self.q_dr, Mapping) else self.q_dr
        object.__setattr__(self, "q_dr",
                           tuple(sorted((int(l), int(v)) for l, v in dr)))
        for v in (*self.q_w, *self.q_a, *(v for _, v in self.q_dr)):
            if v < 0:
                raise ValueError(f"fractional bits must be >= 0, got {v}")

    @property
    def dr_map(self) -> dict[int, int]:
        return dict(self.q_dr)

    def dr_bits(self, layer: int) -> int:
        for l, v in self.q_dr:
            if l == layer:
                return v
        raise KeyError(f"no routing wordlength for layer {layer}")

    def validate_for(self, model: CapsModel) -> None:
        L = model.num_layers
        if len(self.q_w) != L or len(self.q_a) != L:
            raise ValueError(f"config covers {len(self.q_w)}/{len(self.q_a)} layers, "
                             f"model has {L}")
        if tuple(l for l, _ in self.q_dr) != model.routing_layers:
            raise ValueError(f"config routing layers {[l for l, _ in self.q_dr]} != "
                             f"model routing layers {list(model.routing_layers)}")

    @classmethod
    def uniform(cls, model: CapsModel, scheme: RoundingScheme,
                q_w: int, q_a: int | None = None,
                q_dr: int | None = None) -> "QuantConfig":
        """Uniform wordlengths; routing internals default to q_a."""
        qa = q_w if q_a is None else q_a
        qd = qa if q_dr is None else q_dr
        L = model.num_layers
        return cls(scheme, (q_w,) * L, (qa,) * L,
                   tuple((l, qd) for l in model.routing_layers))

    def with_q_w(self, q_w: Iterable[int]) -> "QuantConfig":
        return dataclasses.replace(self, q_w=tuple(q_w))

    def with_q_a(self, q_a: Iterable[int], retie_dr: bool = False) -> "QuantConfig":
        """Replace activation bits; with retie_dr, routing internals follow
        their layer's new activation wordlength (the pre-specialization tie)."""
        q_a = tuple(q_a)
        q_dr = tuple((l, q_a[l]) for l, _ in self.q_dr) if retie_dr else self.q_dr
        return dataclasses.replace(self, q_a=q_a, q_dr=q_dr)

    def with_dr_bits(self, layer: int, bits: int) -> "QuantConfig":
        q_dr = tuple((l, bits if l == layer else v) for l, v in self.q_dr)
        return dataclasses.replace(self, q_dr=q_dr)


def squash(s: np.ndarray, quant: Quantizer | None = None,
           rng: RandomStream | None = None) -> np.ndarray:
    """v = (|s|^2 / (1 + |s|^2)) * s/|s| along the last axis; the zero
    vector maps to itself. When `quant` is given the input is quantized
    first (the lowered-precision entry into the nonlinearity)."""
    s = np.asarray(s, dtype=np.float64)
    if quant is not None:
        s = quant.tensor(s, rng)
    norm = np.linalg.norm(s, axis=-1, keepdims=True)
    return s * (norm / (1.0 + norm * norm))


def routing_softmax(b: np.ndarray, quant: Quantizer | None = None,
                    rng: RandomStream | None = None) -> np.ndarray:
    """Coupling coefficients: softmax of the logits over the output-capsule
    axis (last axis), max-subtracted for stability."""
    b = np.asarray(b, dtype=np.float64)
    if quant is not None:
        b = quant.tensor(b, rng)
    z = b - b.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def dynamic_routing(votes: np.ndarray, iterations: int = 3,
                    drq: Quantizer | None = None,
                    rng: RandomStream | None = None) -> np.ndarray:
    """Routing by agreement over votes [N_in, N_out, D] -> [N_out, D].

    Per iteration: coefficients from the logits, weighted vote sum,
    squash, agreement, logit update. With `drq`, every routing array
    (softmax/squash inputs and c, s, v, a, b after each update) is
    snapped to the routing wordlength.
    """
    votes = np.asarray(votes, dtype=np.float64)
    if votes.ndim != 3:
        raise ValueError(f"votes must be [N_in, N_out, D], got {votes.shape}")
    if iterations < 1:
        raise ValueError("routing needs at least one iteration")

    def q(t: np.ndarray) -> np.ndarray:
        return drq.tensor(t, rng) if drq is not None else t

    n_in, n_out, _ = votes.shape
    b = np.zeros((n_in, n_out))
    v = None
    for _ in range(iterations):
        c = q(routing_softmax(b, quant=drq, rng=rng))
        s = np.einsum("ij,ijd->jd", c, votes)
        v = q(squash(s, quant=drq, rng=rng))
        a = np.einsum("jd,ijd->ij", v, votes)
        b = q(b + a)
    return v


def _to_caps_map(y: np.ndarray, caps_types: int, d: int) -> np.ndarray:
    ch, h, w = y.shape
    return y.reshape(caps_types, d, h, w).transpose(0, 2, 3, 1)


def _as_channels(t: np.ndarray) -> np.ndarray:
    if t.ndim == 3:
        return t
    types, h, w, d = t.shape
    return t.transpose(0, 3, 1, 2).reshape(types * d, h, w)


def _flatten_caps(t: np.ndarray) -> np.ndarray:
    if t.ndim == 2:
        return t
    types, h, w, d = t.shape
    return t.reshape(types * h * w, d)


def _layer_quantizers(cfg: QuantConfig | None, spec: LayerSpec, idx: int):
    if cfg is None:
        return None, None, None
    wq = Quantizer(FixedPointFormat(1, cfg.q_w[idx]), cfg.scheme)
    aq = Quantizer(FixedPointFormat(1, cfg.q_a[idx]), cfg.scheme)
    drq = None
    if spec.uses_dynamic_routing:
        drq = Quantizer(FixedPointFormat(1, cfg.dr_bits(idx)), cfg.scheme)
    return wq, aq, drq


def _run_layer(spec: LayerSpec, inp: np.ndarray, w: np.ndarray,
               b: np.ndarray | None, drq: Quantizer | None,
               rng: RandomStream | None) -> np.ndarray:
    if spec.kind is LayerKind.CONV:
        bias = b if b is not None else np.zeros(w.shape[0])
        return relu(conv2d(_as_channels(inp), w, bias, spec.stride))
    if spec.kind in (LayerKind.PRIMARY_CAPS, LayerKind.CONV_CAPS) \
            and not spec.uses_dynamic_routing:
        bias = b if b is not None else np.zeros(w.shape[0])
        y = conv2d(_as_channels(inp), w, bias, spec.stride)
        return squash(_to_caps_map(y, spec.caps_types, spec.d_out))
    if spec.kind is LayerKind.CONV_CAPS:  # routing variant
        t, h, wd, d = inp.shape
        k, stride = spec.kernel, spec.stride
        win = np.lib.stride_tricks.sliding_window_view(inp, (k, k), axis=(1, 2))
        win = win[:, ::stride, ::stride]  # [T, H', W', D, k, k]
        ho, wo = win.shape[1], win.shape[2]
        out = np.empty((spec.caps_types, ho, wo, spec.d_out))
        for y in range(ho):
            for x in range(wo):
                u = win[:, y, x].transpose(0, 2, 3, 1).reshape(t * k * k, d)
                votes = capsule_affine(u, w)
                out[:, y, x, :] = dynamic_routing(votes, spec.routing_iterations,
                                                  drq=drq, rng=rng)
        return out
    # FC_CAPS
    votes = capsule_affine(_flatten_caps(inp), w)
    return dynamic_routing(votes, spec.routing_iterations, drq=drq, rng=rng)


def forward(model: CapsModel, x: np.ndarray, cfg: QuantConfig | None = None,
            rng: RandomStream | None = None) -> np.ndarray:
    """Run the graph on one sample; returns the class capsules
    [num_classes, D]. With `cfg`, layer weights are quantized at q_w
    before use, outputs at q_a after the nonlinearity, and routing
    internals at q_dr."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ValueError(f"input shape {x.shape} != model input {model.input_shape}")
    if cfg is not None:
        cfg.validate_for(model)
        if cfg.scheme is RoundingScheme.SR and rng is None:
            raise ValueError("stochastic rounding needs a RandomStream")

    acts: list[np.ndarray] = []
    for idx, spec in enumerate(model.layers):
        parts = [x if s == -1 else acts[s] for s in model.layer_sources(idx)]
        inp = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
        w, b = model.weights[idx], model.biases[idx]
        wq, aq, drq = _layer_quantizers(cfg, spec, idx)
        if wq is not None:
            w = wq.tensor(w, rng)
            b = wq.tensor(b, rng) if b is not None else None
        out = _run_layer(spec, inp, w, b, drq, rng)
        if aq is not None:
            out = aq.tensor(out, rng)
        acts.append(out)
    return acts[-1]


def predict(model: CapsModel, x: np.ndarray, cfg: QuantConfig | None = None,
            rng: RandomStream | None = None) -> int:
    """Predicted class: the longest output capsule."""
    return int(np.argmax(l2_norm_lastdim(forward(model, x, cfg, rng))))


def evaluate(model: CapsModel, dataset, cfg: QuantConfig | None = None,
             seed: int = 0) -> float:
    """Accuracy over a labeled dataset. Stochastic rounding derives one
    stream per sample from (seed, sample index), so the result does not
    depend on evaluation order."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    stochastic = cfg is not None and cfg.scheme is RoundingScheme.SR
    correct = 0
    for i in range(n):
        rng = RandomStream(seed, i) if stochastic else None
        if predict(model, dataset.images[i], cfg, rng) == int(dataset.labels[i]):
            correct += 1
    return correct / n


def build_shallowcaps(num_classes: int = 10,
                      input_shape: Sequence[int] = (1, 28, 28),
                      width_factor: float = 1.0,
                      routing_iterations: int = 3,
                      seed: int | None = None,
                      init_scale: float = 0.05) -> CapsModel:
    """Three-layer reference topology: 9x9 conv, convolutional primary
    capsules (8-D), fully-connected 16-D class capsules with routing.
    `width_factor` scales channel/type counts for desk-scale runs while
    preserving capsule dimensions."""
    conv_channels = max(1, round(256 * width_factor))
    caps_types = max(1, round(32 * width_factor))
    layers = [
        LayerSpec(LayerKind.CONV, "conv1", kernel=9, stride=1,
                  out_channels=conv_channels),
        LayerSpec(LayerKind.PRIMARY_CAPS, "primarycaps", kernel=9, stride=2,
                  caps_types=caps_types, d_out=8),
        LayerSpec(LayerKind.FC_CAPS, "digitcaps", num_caps_out=num_classes,
                  d_out=16, uses_dynamic_routing=True,
                  routing_iterations=routing_iterations, has_bias=False),
    ]
    model = CapsModel(layers, input_shape, num_classes, name="shallowcaps")
    if seed is not None:
        model = randomize_weights(model, seed, init_scale)
    return model


@dataclass(frozen=True)
class DeepCapsConfig:
    """Hyperparameters for the deeper topology; only the block structure
    is fixed (4 blocks of 3 sequential + 1 parallel capsule conv layers,
    routing on the last block's parallel layer and on the head)."""

    input_shape: tuple[int, int, int] = (1, 28, 28)
    num_classes: int = 10
    conv_channels: int = 32
    conv_kernel: int = 3
    block_caps_types: tuple[int, ...] = (4, 4, 4, 4)
    block_caps_dim: tuple[int, ...] = (4, 4, 8, 8)
    block_kernels: tuple[int, ...] = (3, 3, 1, 1)
    block_strides: tuple[int, ...] = (2, 1, 1, 1)
    head_caps_dim: int = 16
    routing_iterations: int = 3


def build_deepcaps_like(config: DeepCapsConfig = DeepCapsConfig(),
                        seed: int | None = None,
                        init_scale: float = 0.05) -> CapsModel:
    """Deeper capsule topology: conv stem, then four blocks of three
    sequential capsule convolutions plus one parallel branch from the
    block input (merged by capsule-type concatenation), then a routed
    fully-connected head. The parallel branch of the last block routes.
    The parallel kernel is derived so both branches line up spatially;
    inconsistent hyperparameters fail construction."""
    if not (len(config.block_caps_types) == len(config.block_caps_dim)
            == len(config.block_kernels) == len(config.block_strides) == 4):
        raise ValueError("block hyperparameters must cover exactly 4 blocks")

    layers = [LayerSpec(LayerKind.CONV, "conv1", kernel=config.conv_kernel,
                        stride=1, out_channels=config.conv_channels)]
    _, h, w = config.input_shape
    h, w = _hw_out(h, w, config.conv_kernel, 1, "conv1")
    block_in = (0,)  # source indices feeding the current block
    last_block = len(config.block_caps_types) - 1

    for b, (types, dim, k, stride) in enumerate(zip(
            config.block_caps_types, config.block_caps_dim,
            config.block_kernels, config.block_strides)):
        h1, w1 = _hw_out(h, w, k, stride, f"block{b}")
        h3, w3 = h1, w1
        for _ in range(2):
            h3, w3 = _hw_out(h3, w3, k, 1, f"block{b}")
        kp_h = h - stride * (h3 - 1)
        kp_w = w - stride * (w3 - 1)
        if kp_h != kp_w or kp_h < 1 or kp_h > min(h, w):
            raise ValueError(f"block {b}: no parallel kernel matches the "
                             f"sequential output {h3}x{w3} from input {h}x{w}")

        base = len(layers)
        layers.append(LayerSpec(LayerKind.CONV_CAPS, f"block{b}.seq0", kernel=k,
                                stride=stride, caps_types=types, d_out=dim,
                                sources=block_in))
        layers.append(LayerSpec(LayerKind.CONV_CAPS, f"block{b}.seq1", kernel=k,
                                stride=1, caps_types=types, d_out=dim))
        layers.append(LayerSpec(LayerKind.CONV_CAPS, f"block{b}.seq2", kernel=k,
                                stride=1, caps_types=types, d_out=dim))
        routing = b == last_block
        layers.append(LayerSpec(LayerKind.CONV_CAPS, f"block{b}.par", kernel=kp_h,
                                stride=stride, caps_types=types, d_out=dim,
                                uses_dynamic_routing=routing,
                                routing_iterations=config.routing_iterations,
                                has_bias=not routing, sources=block_in))
        block_in = (base + 2, base + 3)
        h, w = h3, w3

    layers.append(LayerSpec(LayerKind.FC_CAPS, "classcaps",
                            num_caps_out=config.num_classes,
                            d_out=config.head_caps_dim,
                            uses_dynamic_routing=True,
                            routing_iterations=config.routing_iterations,
                            has_bias=False, sources=block_in))
    model = CapsModel(layers, config.input_shape, config.num_classes,
                      name="deepcaps-like")
    if seed is not None:
        model = randomize_weights(model, seed, init_scale)
    return model
