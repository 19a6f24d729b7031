"""
Model zoo - small classifiers with four named feature taps each

Three architectures stand in for the large ImageNet networks used in transfer
studies: ConvNetA (wide conv-relu-maxpool stages), ConvNetB (thin mixed 3x3 /
5x5 convs with average pooling) and MiniResNet (residual blocks). Every model
exposes four taps, one at the end of each stage, ordered bottom to top.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from core.rng import RngStream
from core.tensor_ops import conv_output_shape, layer_backward, layer_forward
from utils.errors import InvalidArgumentError


NUM_TAPS = 4
INPUT = "input"


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    zero_pad: int = 0
    units: int = 0
    inputs: Tuple[str, ...] = ()  # empty means the previous layer

    @property
    def has_params(self):
        return self.kind in ("conv", "dense")


@dataclass(frozen=True)
class ModelSpec:
    architecture: str
    input_shape: Tuple[int, int, int]
    num_classes: int
    layers: Tuple[LayerSpec, ...]
    taps: Tuple[int, ...]

    def canonical(self):
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))


def spec_fingerprint(spec):
    """8-byte hash of the canonical spec serialization"""
    return hashlib.sha256(spec.canonical().encode("utf-8")).digest()[:8]


@lru_cache(maxsize=None)
def _sources(spec):
    """Per layer, the indices it reads from (-1 is the model input)"""
    index = {layer.name: i for i, layer in enumerate(spec.layers)}
    index[INPUT] = -1
    sources = []
    for i, layer in enumerate(spec.layers):
        if not layer.inputs:
            sources.append((i - 1,))
            continue
        try:
            src = tuple(index[name] for name in layer.inputs)
        except KeyError as e:
            raise InvalidArgumentError(f"layer '{layer.name}' reads unknown layer {e}") from e
        if any(s >= i for s in src):
            raise InvalidArgumentError(f"layer '{layer.name}' reads a later layer")
        sources.append(src)
    return tuple(sources)


@lru_cache(maxsize=None)
def infer_shapes(spec):
    """
    Per-layer output shapes and weight shapes for one sample

    Raises InvalidArgumentError when consecutive layers do not fit together.
    """
    shapes = []
    weights = {}
    for i, (layer, src) in enumerate(zip(spec.layers, _sources(spec))):
        ins = [spec.input_shape if s == -1 else shapes[s] for s in src]
        shape = ins[0]
        kind = layer.kind
        if kind == "conv":
            if len(shape) != 3:
                raise InvalidArgumentError(f"conv '{layer.name}' needs a C x H x W input, got {shape}")
            c, h, w = shape
            if layer.kernel > h + 2 * layer.zero_pad or layer.kernel > w + 2 * layer.zero_pad:
                raise InvalidArgumentError(f"conv '{layer.name}' kernel does not fit {shape}")
            ho, wo = conv_output_shape(h, w, layer.kernel, layer.kernel, layer.stride, layer.zero_pad)
            out = (layer.out_channels, ho, wo)
            weights[f"{layer.name}.weight"] = (layer.out_channels, c, layer.kernel, layer.kernel)
            weights[f"{layer.name}.bias"] = (layer.out_channels,)
        elif kind == "relu":
            out = shape
        elif kind in ("maxpool2", "avgpool2"):
            if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
                raise InvalidArgumentError(f"pool '{layer.name}' needs even spatial dims, got {shape}")
            out = (shape[0], shape[1] // 2, shape[2] // 2)
        elif kind == "flatten":
            out = (int(np.prod(shape)),)
        elif kind == "dense":
            if len(shape) != 1:
                raise InvalidArgumentError(f"dense '{layer.name}' needs a flat input, got {shape}")
            out = (layer.units,)
            weights[f"{layer.name}.weight"] = (layer.units, shape[0])
            weights[f"{layer.name}.bias"] = (layer.units,)
        elif kind == "add-skip":
            if len(ins) != 2 or ins[0] != ins[1]:
                raise InvalidArgumentError(f"add-skip '{layer.name}' operands differ: {ins}")
            out = shape
        else:
            raise InvalidArgumentError(f"unknown layer kind '{kind}'")
        shapes.append(tuple(int(d) for d in out))
    if not spec.layers or spec.layers[-1].kind != "dense" or shapes[-1] != (spec.num_classes,):
        raise InvalidArgumentError("the last layer must be dense with one output per class")
    if len(spec.taps) != NUM_TAPS or list(spec.taps) != sorted(set(spec.taps)):
        raise InvalidArgumentError(f"need {NUM_TAPS} strictly increasing tap indices, got {spec.taps}")
    return tuple(shapes), weights


class _SpecBuilder:
    """Appends layers in order and records the tap points"""

    def __init__(self):
        self.layers: List[LayerSpec] = []
        self.taps: List[int] = []

    @property
    def last(self):
        return self.layers[-1].name if self.layers else INPUT

    def conv(self, name, out_channels, kernel, zero_pad=None, inputs=()):
        pad = kernel // 2 if zero_pad is None else zero_pad
        self.layers.append(LayerSpec(name, "conv", out_channels=out_channels, kernel=kernel,
                                     zero_pad=pad, inputs=tuple(inputs)))
        return name

    def add(self, kind, name, inputs=(), **kw):
        self.layers.append(LayerSpec(name, kind, inputs=tuple(inputs), **kw))
        return name

    def tap(self):
        self.taps.append(len(self.layers) - 1)


def _stem_pad(side, kernel=3, multiple=16):
    """Zero padding for the first conv so four 2x2 poolings divide the map evenly"""
    target = -(-side // multiple) * multiple
    if (target - side) % 2:
        raise InvalidArgumentError(f"input side {side} must be even")
    return kernel // 2 + (target - side) // 2


def _convnet_a(b, channels, side):
    widths = (16, 32, 64, 64)
    for s, width in enumerate(widths, 1):
        b.conv(f"stage{s}.conv", width, 3, zero_pad=_stem_pad(side) if s == 1 else None)
        b.add("relu", f"stage{s}.relu")
        b.add("maxpool2", f"stage{s}.pool")
        b.tap()


def _convnet_b(b, channels, side):
    b.conv("stage1.conv1", 8, 3, zero_pad=_stem_pad(side))
    b.add("relu", "stage1.relu1")
    b.conv("stage1.conv2", 8, 5)
    b.add("relu", "stage1.relu2")
    b.add("avgpool2", "stage1.pool")
    b.tap()
    b.conv("stage2.conv", 12, 3)
    b.add("relu", "stage2.relu")
    b.add("avgpool2", "stage2.pool")
    b.tap()
    b.conv("stage3.conv", 16, 5)
    b.add("relu", "stage3.relu")
    b.add("avgpool2", "stage3.pool")
    b.tap()
    b.conv("stage4.conv1", 16, 3)
    b.add("relu", "stage4.relu1")
    b.conv("stage4.conv2", 24, 5)
    b.add("relu", "stage4.relu2")
    b.add("avgpool2", "stage4.pool")
    b.tap()


def _mini_resnet(b, channels, side):
    b.conv("stem.conv", 16, 3, zero_pad=_stem_pad(side))
    b.add("relu", "stem.relu")
    width_in = 16
    for k, width in enumerate((16, 32, 32, 64), 1):
        block_in = b.last
        b.conv(f"block{k}.conv1", width, 3)
        b.add("relu", f"block{k}.relu1")
        main = b.conv(f"block{k}.conv2", width, 3)
        skip = block_in
        if width != width_in:
            skip = b.conv(f"block{k}.proj", width, 1, inputs=(block_in,))
        b.add("add-skip", f"block{k}.add", inputs=(main, skip))
        b.add("relu", f"block{k}.relu2")
        b.add("avgpool2", f"block{k}.pool")
        b.tap()
        width_in = width


ARCHITECTURES = {
    "ConvNetA": _convnet_a,
    "ConvNetB": _convnet_b,
    "MiniResNet": _mini_resnet,
}


def build_spec(name, num_classes, input_shape):
    if name not in ARCHITECTURES:
        raise InvalidArgumentError(f"unknown architecture '{name}' (known: {', '.join(ARCHITECTURES)})")
    input_shape = tuple(int(d) for d in input_shape)
    if len(input_shape) != 3 or input_shape[1] != input_shape[2]:
        raise InvalidArgumentError(f"zoo models take square C x H x W inputs, got {input_shape}")
    if num_classes < 2:
        raise InvalidArgumentError(f"need at least 2 classes, got {num_classes}")

    builder = _SpecBuilder()
    ARCHITECTURES[name](builder, input_shape[0], input_shape[1])
    builder.add("flatten", "flatten")
    builder.add("dense", "classifier", units=int(num_classes))
    spec = ModelSpec(name, input_shape, int(num_classes), tuple(builder.layers), tuple(builder.taps))
    infer_shapes(spec)
    return spec


@dataclass(frozen=True)
class Model:
    spec: ModelSpec
    weights: Dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        _, shapes = infer_shapes(self.spec)
        if set(shapes) != set(self.weights):
            missing = sorted(set(shapes) ^ set(self.weights))
            raise InvalidArgumentError(f"weights do not match spec: {missing}")
        for name, shape in shapes.items():
            if tuple(self.weights[name].shape) != shape:
                raise InvalidArgumentError(
                    f"weight '{name}' has shape {self.weights[name].shape}, expected {shape}"
                )

    @property
    def name(self):
        return self.spec.architecture

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    @property
    def input_shape(self):
        return self.spec.input_shape

    @property
    def num_classes(self):
        return self.spec.num_classes

    def astype(self, dtype):
        return Model(self.spec, {k: v.astype(dtype) for k, v in self.weights.items()})

    def layer_params(self, layer):
        if layer.kind == "conv":
            return {"weights": self.weights[f"{layer.name}.weight"],
                    "bias": self.weights[f"{layer.name}.bias"],
                    "stride": layer.stride, "zero_pad": layer.zero_pad}
        if layer.kind == "dense":
            return {"weights": self.weights[f"{layer.name}.weight"],
                    "bias": self.weights[f"{layer.name}.bias"]}
        return {}


def build_model(name, num_classes, input_shape, seed, dtype=np.float32):
    """
    Build a zoo model with seeded fan-in-scaled uniform weights and zero biases

    Weights are drawn from U(-sqrt(6 / fan_in), sqrt(6 / fan_in)) in layer order
    from one stream keyed by (seed, architecture), so (name, seed) fixes them.
    """
    return init_model(build_spec(name, num_classes, input_shape), seed, dtype)


def init_model(spec, seed, dtype=np.float32):
    _, shapes = infer_shapes(spec)
    rng = RngStream(seed, 0, 0, f"init/{spec.architecture}").generator()
    weights = {}
    for layer in spec.layers:
        if not layer.has_params:
            continue
        wshape = shapes[f"{layer.name}.weight"]
        fan_in = int(np.prod(wshape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        weights[f"{layer.name}.weight"] = rng.uniform(-bound, bound, size=wshape).astype(dtype)
        weights[f"{layer.name}.bias"] = np.zeros(shapes[f"{layer.name}.bias"], dtype=dtype)
    return Model(spec, weights)


class ForwardTrace(NamedTuple):
    x: np.ndarray
    logits: np.ndarray
    outputs: List[np.ndarray]
    caches: list


def _check_input(model, x):
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim not in (3, 4) or tuple(x.shape[-3:]) != model.input_shape:
        raise InvalidArgumentError(
            f"{model.name} expects input {model.input_shape} (optionally batched), got {x.shape}"
        )
    return x


def tap_layer_index(spec, tap):
    if not isinstance(tap, (int, np.integer)) or not 1 <= tap <= NUM_TAPS:
        raise InvalidArgumentError(f"tap must be in 1..{NUM_TAPS}, got {tap}")
    return spec.taps[int(tap) - 1]


def run_forward(model, x):
    """Forward pass keeping every layer output and cache for a later backward"""
    x = _check_input(model, x)
    outputs, caches = [], []
    for layer, src in zip(model.spec.layers, _sources(model.spec)):
        args = [x if s == -1 else outputs[s] for s in src]
        inp = tuple(args) if layer.kind == "add-skip" else args[0]
        out, cache = layer_forward(layer.kind, model.layer_params(layer), inp)
        outputs.append(out)
        caches.append(cache)
    return ForwardTrace(x, outputs[-1], outputs, caches)


def run_backward(model, trace, grad_logits, injections=None, need_params=False):
    """
    One backward sweep from the logits to the input

    Args:
        injections: {layer index: gradient} added to that layer's output gradient,
            used for losses defined on intermediate features
        need_params: also return parameter gradients keyed like model.weights

    Returns:
        (grad_x, grad_params)
    """
    spec = model.spec
    sources = _sources(spec)
    grads: List[Optional[np.ndarray]] = [None] * len(spec.layers)
    grad_logits = np.asarray(grad_logits, dtype=trace.logits.dtype)
    if grad_logits.shape != trace.logits.shape:
        raise InvalidArgumentError(f"grad_logits shape {grad_logits.shape} != logits {trace.logits.shape}")
    grads[-1] = grad_logits
    for idx, g in (injections or {}).items():
        target_shape = trace.outputs[idx].shape
        g = np.asarray(g, dtype=trace.logits.dtype)
        if g.size != int(np.prod(target_shape)):
            raise InvalidArgumentError(f"feature gradient of size {g.size} does not fit layer output {target_shape}")
        g = g.reshape(target_shape)
        grads[idx] = g if grads[idx] is None else grads[idx] + g

    grad_x = None
    grad_params = {}
    for i in reversed(range(len(spec.layers))):
        g = grads[i]
        if g is None:
            continue
        layer = spec.layers[i]
        gi, gp = layer_backward(layer.kind, trace.caches[i], g, need_params=need_params)
        if need_params and gp:
            grad_params[f"{layer.name}.weight"] = gp["weights"]
            grad_params[f"{layer.name}.bias"] = gp["bias"]
        parts = gi if layer.kind == "add-skip" else (gi,)
        for s, part in zip(sources[i], parts):
            if s == -1:
                grad_x = part if grad_x is None else grad_x + part
            else:
                grads[s] = part if grads[s] is None else grads[s] + part
        grads[i] = None
    if grad_x is None:
        grad_x = np.zeros_like(trace.x)
    return grad_x, grad_params


def forward(model, x):
    return run_forward(model, x).logits


def predict_logits(model, images, batch_size=256):
    """Logits for an N x C x H x W stack, evaluated in fixed-size chunks"""
    images = np.asarray(images)
    if images.shape[0] == 0:
        return np.zeros((0, model.num_classes), dtype=model.dtype)
    chunks = [forward(model, images[i:i + batch_size]) for i in range(0, images.shape[0], batch_size)]
    return np.concatenate(chunks)


def forward_with_taps(model, x, tap):
    """
    Logits plus the activation right after tap layer `tap` (1..4)

    The feature keeps its layer shape; use .ravel() for the flattened vector.
    """
    idx = tap_layer_index(model.spec, tap)
    trace = run_forward(model, x)
    return trace.logits, trace.outputs[idx]


def input_gradient(model, x, grad_logits, tap=None, grad_feature=None):
    """
    Gradient with respect to x of <grad_logits, logits> + <grad_feature, feature_tap>

    Both contributions flow through a single backward sweep; the feature
    gradient is injected at the tap layer.
    """
    injections = {}
    if grad_feature is not None:
        injections[tap_layer_index(model.spec, tap)] = grad_feature
    trace = run_forward(model, x)
    grad_x, _ = run_backward(model, trace, grad_logits, injections)
    return grad_x
