"""U-Net-like network of spatiotemporal partial convolutions.

Encoder block ``b`` runs ``layers_per_block`` partial convolutions, the last
one strided.  The decoder walks back up: nearest upsampling, concatenation of
data and mask with the skip tensor of the same resolution, then unstrided
partial convolutions.  A 1x1x1 linear partial convolution maps the result to
``out_channels``.  Every other layer is followed by a leaky ReLU.

Skip tensors: level 0 is the network input, level ``b > 0`` the output of
encoder block ``b - 1``.  Decoder block ``b`` outputs ``filters[b]`` channels
and reuses the kernel sizes of encoder block ``b``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericalError, ShapeError, StaleCacheError
from .pconv import (
    PConvLayer,
    init_layer,
    leaky_relu,
    leaky_relu_backward,
    pconv_backward,
    pconv_forward,
    upsample_backward,
    upsample_nearest,
)
from .tensor import DTYPE, MaskedBlock

Triple = tuple[int, int, int]


def _triple(v) -> Triple:
    if np.isscalar(v):
        return (int(v),) * 3
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ConfigError(f"expected a scalar or three values, got {v}")
    return v


def _triples(v, n, what) -> list[Triple]:
    """Broadcast a scalar / single triple to ``n`` triples."""
    if np.isscalar(v) or (len(v) == 3 and all(np.isscalar(x) for x in v)):
        return [_triple(v)] * n
    out = [_triple(x) for x in v]
    if len(out) == 1:
        out = out * n
    if len(out) != n:
        raise ConfigError(f"{what}: expected {n} entries, got {len(out)}")
    return out


@dataclass
class ModelSpec:
    num_blocks: int = 2
    layers_per_block: int = 1
    strides: list = field(default_factory=lambda: [(2, 2, 2)])
    kernel_sizes: list = field(default_factory=lambda: [(3, 3, 3)])
    filters: list = field(default_factory=lambda: [16, 16])
    alpha: float = 0.1
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.num_blocks < 1 or self.layers_per_block < 1:
            raise ConfigError("num_blocks and layers_per_block must be >= 1")
        self.strides = _triples(self.strides, self.num_blocks, "strides")
        self.kernel_sizes = _triples(self.kernel_sizes, self.num_blocks * self.layers_per_block, "kernel_sizes")
        self.filters = [int(f) for f in np.atleast_1d(self.filters)]
        if len(self.filters) != self.num_blocks:
            raise ConfigError(f"filters has {len(self.filters)} entries, num_blocks is {self.num_blocks}")
        if min(self.filters) < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if any(k % 2 == 0 or k < 1 for ks in self.kernel_sizes for k in ks):
            raise ConfigError(f"kernel sizes must be odd, got {self.kernel_sizes}")
        if any(s < 1 for st in self.strides for s in st):
            raise ConfigError(f"strides must be >= 1, got {self.strides}")

    @classmethod
    def full_size(cls, **overrides) -> "ModelSpec":
        """Two single-layer blocks, stride 2 and 3x3x3 kernels, 16 filters each."""
        return cls(**overrides)

    def block_kernels(self, b) -> list[Triple]:
        L = self.layers_per_block
        return self.kernel_sizes[b * L : (b + 1) * L]

    @property
    def stride_product(self) -> Triple:
        return tuple(int(np.prod([s[a] for s in self.strides])) for a in range(3))

    def check_input(self, shape):
        """Raise ShapeError unless a (nx, ny, nt, c) block fits this network."""
        if len(shape) != 4 or shape[3] != self.in_channels:
            raise ShapeError(f"input shape {tuple(shape)} needs {self.in_channels} channels")
        for n, p, axis in zip(shape[:3], self.stride_product, "xyt"):
            if n % p:
                raise ShapeError(f"size {n} along {axis} is not divisible by the stride product {p}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strides"] = [list(s) for s in self.strides]
        d["kernel_sizes"] = [list(k) for k in self.kernel_sizes]
        return d

    @classmethod
    def from_dict(cls, d) -> "ModelSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model spec keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelState:
    encoder: list  # encoder[b][l] -> PConvLayer
    decoder: list  # decoder[b][l] -> PConvLayer, b = resolution level
    head: PConvLayer

    def named_layers(self):
        for b, block in enumerate(self.encoder):
            for i, layer in enumerate(block):
                yield f"enc{b}.{i}", layer
        for b in reversed(range(len(self.decoder))):
            for i, layer in enumerate(self.decoder[b]):
                yield f"dec{b}.{i}", layer
        yield "head", self.head

    def parameters(self) -> dict[str, np.ndarray]:
        """Ordered ``name -> array`` view; arrays are shared, not copied."""
        out = {}
        for name, layer in self.named_layers():
            out[f"{name}.kernels"] = layer.kernels
            out[f"{name}.bias"] = layer.bias
        return out

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for _, layer in self.named_layers())

    def with_parameters(self, params: dict) -> "ModelState":
        def swap(name, layer):
            return PConvLayer(params[f"{name}.kernels"], params[f"{name}.bias"], layer.stride)

        enc = [[swap(f"enc{b}.{i}", ly) for i, ly in enumerate(blk)] for b, blk in enumerate(self.encoder)]
        dec = [[swap(f"dec{b}.{i}", ly) for i, ly in enumerate(blk)] for b, blk in enumerate(self.decoder)]
        return ModelState(enc, dec, swap("head", self.head))

    def astype(self, dtype) -> "ModelState":
        return self.with_parameters({k: v.astype(dtype) for k, v in self.parameters().items()})


def build(spec: ModelSpec, seed: int = 0, dtype=DTYPE) -> ModelState:
    rng = np.random.default_rng(seed)
    L = spec.layers_per_block
    encoder = []
    cin = spec.in_channels
    for b in range(spec.num_blocks):
        block = []
        for i, ks in enumerate(spec.block_kernels(b)):
            stride = spec.strides[b] if i == L - 1 else (1, 1, 1)
            block.append(init_layer(ks, cin, spec.filters[b], stride, rng, dtype))
            cin = spec.filters[b]
        encoder.append(block)

    decoder = [None] * spec.num_blocks
    up_channels = spec.filters[-1]
    for b in reversed(range(spec.num_blocks)):
        skip_channels = spec.in_channels if b == 0 else spec.filters[b - 1]
        cin = up_channels + skip_channels
        block = []
        for ks in spec.block_kernels(b):
            block.append(init_layer(ks, cin, spec.filters[b], (1, 1, 1), rng, dtype))
            cin = spec.filters[b]
        decoder[b] = block
        up_channels = spec.filters[b]
    head = init_layer((1, 1, 1), spec.filters[0], spec.out_channels, (1, 1, 1), rng, dtype)
    return ModelState(encoder, decoder, head)


def concat(a: MaskedBlock, b: MaskedBlock) -> MaskedBlock:
    if a.shape[:3] != b.shape[:3]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape}")
    return MaskedBlock(np.concatenate([a.data, b.data], axis=3), np.concatenate([a.mask, b.mask], axis=3))


@dataclass
class _Step:
    kind: str  # "conv", "up", "cat"
    name: str = ""
    layer: PConvLayer | None = None
    inp: MaskedBlock | None = None
    cache: object = None
    pre: np.ndarray | None = None  # pre-activation output, None for the linear head
    factor: Triple | None = None
    level: int = 0
    split: int = 0


@dataclass
class ForwardCache:
    steps: list
    state: ModelState
    in_shape: tuple
    used: bool = False


def forward(state: ModelState, spec: ModelSpec, block: MaskedBlock, keep_cache=True, check_finite=False):
    """Run the network; returns ``(output MaskedBlock, cache or None)``.

    With ``check_finite`` a NumericalError names the first layer producing a
    non-finite activation.
    """
    spec.check_input(block.shape)
    steps = []

    def conv(h, name, layer, activate=True):
        if keep_cache:
            out, pc = pconv_forward(h, layer, return_cache=True)
        else:
            out, pc = pconv_forward(h, layer), None
        pre = out.data
        data = leaky_relu(pre, spec.alpha) if activate else pre
        if check_finite and not np.all(np.isfinite(data)):
            raise NumericalError(f"non-finite activation in layer {name}")
        if keep_cache:
            steps.append(_Step("conv", name, layer, h, pc, pre if activate else None))
        return MaskedBlock(data, out.mask)

    skips = [block]
    h = block
    for b, layers in enumerate(state.encoder):
        for i, layer in enumerate(layers):
            h = conv(h, f"enc{b}.{i}", layer)
        skips.append(h)
    for b in reversed(range(spec.num_blocks)):
        factor = spec.strides[b]
        h = upsample_nearest(h, factor)
        if keep_cache:
            steps.append(_Step("up", factor=factor))
        skip = skips[b]
        if keep_cache:
            steps.append(_Step("cat", level=b, split=h.shape[3]))
        h = concat(h, skip)
        for i, layer in enumerate(state.decoder[b]):
            h = conv(h, f"dec{b}.{i}", layer)
    out = conv(h, "head", state.head, activate=False)
    cache = ForwardCache(steps, state, block.shape) if keep_cache else None
    return out, cache


def backward(state: ModelState, spec: ModelSpec, cache: ForwardCache, grad_output) -> dict[str, np.ndarray]:
    """Parameter gradients of ``sum(grad_output * output)``, keyed like ``state.parameters()``."""
    if cache is None or cache.state is not state or cache.used:
        raise StaleCacheError("forward cache does not belong to this model state or was already consumed")
    cache.used = True
    grads = {}
    skip_grads = {}  # level -> gradient w.r.t. that skip tensor
    g = np.asarray(grad_output)
    for step in reversed(cache.steps):
        if step.kind == "conv":
            if step.pre is not None:
                g = leaky_relu_backward(step.pre, g, spec.alpha)
            gk, gb, g = pconv_backward(step.inp, step.layer, g, step.cache, need_input_grad=step.name != "enc0.0")
            grads[f"{step.name}.kernels"] = gk
            grads[f"{step.name}.bias"] = gb
            level = _skip_level_of_input(step.name)
            if level in skip_grads:
                g = g + skip_grads.pop(level)
        elif step.kind == "cat":
            skip_grads[step.level] = g[..., step.split :]
            g = g[..., : step.split]
        elif step.kind == "up":
            g = upsample_backward(g, step.factor)
    return {k: grads[k] for k in state.parameters()}


def _skip_level_of_input(name):
    """Level whose skip tensor is the *input* of layer ``name``, if any.

    The first layer of encoder block ``b`` consumes the level-``b`` skip
    tensor; level 0 (the raw input) needs no gradient.
    """
    if not name.startswith("enc"):
        return None
    b, i = (int(x) for x in name[3:].split("."))
    if i != 0 or b == 0:
        return None
    return b


def predict(state: ModelState, spec: ModelSpec, block: MaskedBlock) -> MaskedBlock:
    out, _ = forward(state, spec, block, keep_cache=False)
    return out


def fill_reach(spec: ModelSpec) -> Triple:
    """Per-axis distance up to which one valid voxel is guaranteed to validate outputs.

    Follows the deepest path (through the bottleneck) backwards with interval
    arithmetic over one stride period and takes the worst position.  Any gap
    no wider than ``2 * reach`` along each axis is filled.
    """
    reach = []
    for axis in range(3):
        period = spec.stride_product[axis]
        offset = 1000 * period  # far from block edges
        worst = None
        for p in range(offset, offset + period):
            lo, hi = p, p
            for b in range(spec.num_blocks):  # decoder levels 0 .. B-1, walking down
                for ks in spec.block_kernels(b):
                    r = ks[axis] // 2
                    lo, hi = lo - r, hi + r
                s = spec.strides[b][axis]
                lo, hi = lo // s, hi // s
            for b in reversed(range(spec.num_blocks)):  # encoder, back to the input
                kernels = spec.block_kernels(b)
                s = spec.strides[b][axis]
                r = kernels[-1][axis] // 2
                lo, hi = lo * s - r, hi * s + r
                for ks in kernels[:-1]:
                    r = ks[axis] // 2
                    lo, hi = lo - r, hi + r
            d = min(p - lo, hi - p)
            worst = d if worst is None else min(worst, d)
        reach.append(worst)
    return tuple(reach)


def max_fillable_gap(spec: ModelSpec) -> Triple:
    return tuple(2 * r for r in fill_reach(spec))


# --- serialization -----------------------------------------------------------

MODEL_FORMAT = "stpconv-model"
MODEL_VERSION = 1


def save_model(path, spec: ModelSpec, state: ModelState) -> Path:
    """Write ``model.json`` and ``weights.bin`` (little-endian float32, C order per tensor)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = []
    offset = 0
    chunks = []
    for name, arr in state.parameters().items():
        buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "length": int(arr.size)})
        chunks.append(buf)
        offset += len(buf)
    strides = {name: list(layer.stride) for name, layer in state.named_layers()}
    meta = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "spec": spec.to_dict(),
        "n_params": state.n_params,
        "parameters": manifest,
        "layer_strides": strides,
    }
    (path / "model.json").write_text(json.dumps(meta, indent=2))
    (path / "weights.bin").write_bytes(b"".join(chunks))
    return path


def load_model(path) -> tuple[ModelSpec, ModelState]:
    path = Path(path)
    try:
        meta = json.loads((path / "model.json").read_text())
        raw = (path / "weights.bin").read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"cannot load model from {path}: {exc.filename} not found") from exc
    if meta.get("format") != MODEL_FORMAT or meta.get("version") != MODEL_VERSION:
        raise DataError(f"{path / 'model.json'} is not a version {MODEL_VERSION} {MODEL_FORMAT} file")
    spec = ModelSpec.from_dict(meta["spec"])
    template = build(spec, seed=0)
    expected = template.parameters()
    params = {}
    for entry in meta["parameters"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected or expected[name].shape != shape:
            raise DataError(f"parameter {name} with shape {shape} does not fit the stored spec")
        start, n = entry["offset"], entry["length"]
        if start + 4 * n > len(raw):
            raise DataError(f"weights.bin truncated: {name} needs bytes {start}..{start + 4 * n}")
        params[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=start).astype(DTYPE).reshape(shape)
    missing = set(expected) - set(params)
    if missing:
        raise DataError(f"model manifest lacks parameters {sorted(missing)}")
    return spec, template.with_parameters(params)
