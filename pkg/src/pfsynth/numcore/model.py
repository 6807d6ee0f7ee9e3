"""Layer specifications and a sequential network container."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from . import layers as L
from .rng import Rng
from .tensor import DEFAULT_DTYPE, ShapeError, Tensor, flatten, reshape

KINDS = ("dense", "conv2d", "conv2d_transpose", "maxpool2d", "activation", "reshape", "flatten")

# fields each kind may carry; everything else must be None
_ALLOWED = {
    "dense": {"output_dim"},
    "conv2d": {"filter_count", "filter_size", "stride", "padding_mode"},
    "conv2d_transpose": {"filter_count", "filter_size", "stride", "padding_mode"},
    "maxpool2d": {"filter_size", "stride"},
    "activation": {"activation_kind"},
    "reshape": {"target_shape"},
    "flatten": set(),
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filter_count: int | None = None
    filter_size: tuple[int, int] | None = None
    stride: tuple[int, int] | None = None
    padding_mode: str | None = None
    activation_kind: str | None = None
    output_dim: int | None = None
    target_shape: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        allowed = _ALLOWED[self.kind]
        for f in fields(self):
            if f.name == "kind":
                continue
            val = getattr(self, f.name)
            if f.name not in allowed and val is not None:
                raise ValueError(f"{self.kind} layer must not set {f.name}")
        for name in ("filter_size", "stride"):
            val = getattr(self, name)
            if val is not None:
                if isinstance(val, int):
                    val = (val, val)
                    object.__setattr__(self, name, val)
                if len(val) != 2 or min(val) <= 0:
                    raise ValueError(f"{name} must be two positive integers, got {val}")
        if self.kind in ("conv2d", "conv2d_transpose"):
            if not self.filter_count or self.filter_count <= 0 or self.filter_size is None:
                raise ValueError(f"{self.kind} needs a positive filter_count and a filter_size")
            if self.stride is None:
                object.__setattr__(self, "stride", (1, 1))
            if self.padding_mode is None:
                object.__setattr__(self, "padding_mode", "same")
            if self.padding_mode not in ("same", "valid"):
                raise ValueError(f"padding_mode must be same or valid, got {self.padding_mode!r}")
        if self.kind == "maxpool2d":
            if self.filter_size is None:
                raise ValueError("maxpool2d needs filter_size (window)")
            if self.stride is None:
                object.__setattr__(self, "stride", self.filter_size)
        if self.kind == "dense" and (not self.output_dim or self.output_dim <= 0):
            raise ValueError("dense needs a positive output_dim")
        if self.kind == "activation" and self.activation_kind not in L.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation_kind!r}")
        if self.kind == "reshape":
            if not self.target_shape:
                raise ValueError("reshape needs target_shape")
            object.__setattr__(self, "target_shape", tuple(int(s) for s in self.target_shape))

    @property
    def has_params(self) -> bool:
        return self.kind in ("dense", "conv2d", "conv2d_transpose")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name != "kind" and val is not None:
                out[f.name] = list(val) if isinstance(val, tuple) else val
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        for key in ("filter_size", "stride", "target_shape"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


# convenience constructors
def Dense(units: int) -> LayerSpec:
    return LayerSpec("dense", output_dim=units)


def Conv(filters: int, size=5, stride=2, padding="same") -> LayerSpec:
    return LayerSpec("conv2d", filter_count=filters, filter_size=size, stride=stride, padding_mode=padding)


def ConvT(filters: int, size=5, stride=2, padding="same") -> LayerSpec:
    return LayerSpec("conv2d_transpose", filter_count=filters, filter_size=size, stride=stride, padding_mode=padding)


def MaxPool(window=2, stride=None) -> LayerSpec:
    return LayerSpec("maxpool2d", filter_size=window, stride=stride)


def Act(kind: str) -> LayerSpec:
    return LayerSpec("activation", activation_kind=kind)


def Reshape(*shape: int) -> LayerSpec:
    return LayerSpec("reshape", target_shape=shape)


def Flatten() -> LayerSpec:
    return LayerSpec("flatten")


def output_shape(spec: LayerSpec, in_shape: Sequence[int]) -> tuple[int, ...]:
    """Per-example output shape of ``spec`` applied to ``in_shape`` (no batch axis)."""
    in_shape = tuple(in_shape)
    k = spec.kind
    if k == "dense":
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects a flat input, got {in_shape}")
        return (spec.output_dim,)
    if k in ("conv2d", "conv2d_transpose", "maxpool2d"):
        if len(in_shape) != 3:
            raise ShapeError(f"{k} expects HxWxC input, got {in_shape}")
        h, w, c = in_shape
        (kh, kw), (sh, sw) = spec.filter_size, spec.stride
        if k == "conv2d":
            return (
                L.conv_output_size(h, kh, sh, spec.padding_mode),
                L.conv_output_size(w, kw, sw, spec.padding_mode),
                spec.filter_count,
            )
        if k == "conv2d_transpose":
            return (
                L.transpose_output_size(h, kh, sh, spec.padding_mode),
                L.transpose_output_size(w, kw, sw, spec.padding_mode),
                spec.filter_count,
            )
        if kh > h or kw > w:
            raise ShapeError(f"maxpool window {(kh, kw)} larger than input {(h, w)}")
        return ((h - kh) // sh + 1, (w - kw) // sw + 1, c)
    if k == "activation":
        return in_shape
    if k == "reshape":
        if int(np.prod(spec.target_shape)) != int(np.prod(in_shape)):
            raise ShapeError(f"cannot reshape {in_shape} to {spec.target_shape}")
        return spec.target_shape
    if k == "flatten":
        return (int(np.prod(in_shape)),)
    raise AssertionError(k)


def param_shapes(spec: LayerSpec, in_shape: Sequence[int]) -> dict[str, tuple[int, ...]]:
    if spec.kind == "dense":
        return {"w": (in_shape[0], spec.output_dim), "b": (spec.output_dim,)}
    if spec.kind == "conv2d":
        kh, kw = spec.filter_size
        return {"w": (kh, kw, in_shape[2], spec.filter_count), "b": (spec.filter_count,)}
    if spec.kind == "conv2d_transpose":
        kh, kw = spec.filter_size
        return {"w": (kh, kw, spec.filter_count, in_shape[2]), "b": (spec.filter_count,)}
    return {}


class Sequential:
    """A chain of :class:`LayerSpec` with named parameter tensors.

    Parameters are named ``"<prefix><layer index>.w"`` / ``".b"``.
    """

    def __init__(self, specs: Iterable[LayerSpec], input_shape: Sequence[int], prefix: str = ""):
        self.specs = list(specs)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.prefix = prefix
        self.shapes = [self.input_shape]
        for spec in self.specs:
            self.shapes.append(output_shape(spec, self.shapes[-1]))
        self.params: dict[str, Tensor] = {}

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1]

    def param_layout(self) -> dict[str, tuple[int, ...]]:
        layout = {}
        for i, spec in enumerate(self.specs):
            for key, shape in param_shapes(spec, self.shapes[i]).items():
                layout[f"{self.prefix}{i}.{key}"] = shape
        return layout

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_layout().values())

    def param_layers(self) -> list[int]:
        """Indices of layers that own parameters, in order."""
        return [i for i, s in enumerate(self.specs) if s.has_params]

    def layer_param_names(self, layer_index: int) -> list[str]:
        spec = self.specs[layer_index]
        return [f"{self.prefix}{layer_index}.{k}" for k in param_shapes(spec, self.shapes[layer_index])]

    def init(self, rng: Rng, dtype=DEFAULT_DTYPE, std: float = 0.02) -> "Sequential":
        """Weights ~ N(0, std), zero biases."""
        self.params = {}
        for name, shape in self.param_layout().items():
            if name.endswith(".b"):
                data = np.zeros(shape, dtype=dtype)
            else:
                data = rng.normal(shape, scale=std, dtype=dtype)
            self.params[name] = Tensor(data, requires_grad=True, name=name)
        return self

    def load(self, tensors: dict[str, np.ndarray], dtype=DEFAULT_DTYPE) -> "Sequential":
        layout = self.param_layout()
        missing = [n for n in layout if n not in tensors]
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {', '.join(missing)}")
        self.params = {}
        for name, shape in layout.items():
            arr = np.asarray(tensors[name], dtype=dtype)
            if arr.shape != shape:
                raise ShapeError(f"parameter {name}: checkpoint shape {arr.shape} != model shape {shape}")
            self.params[name] = Tensor(arr.copy(), requires_grad=True, name=name)
        return self

    def astype(self, dtype) -> "Sequential":
        for name, p in self.params.items():
            self.params[name] = Tensor(p.data.astype(dtype), requires_grad=True, name=name)
        return self

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"model expects per-example shape {self.input_shape}, got {tuple(x.shape[1:])}")
        for i, spec in enumerate(self.specs):
            x = apply_layer(spec, x, self.params.get(f"{self.prefix}{i}.w"), self.params.get(f"{self.prefix}{i}.b"))
        return x


def apply_layer(spec: LayerSpec, x: Tensor, w: Tensor | None = None, b: Tensor | None = None) -> Tensor:
    """Apply one layer to a batched input."""
    k = spec.kind
    if k == "dense":
        return L.dense(x, w, b)
    if k == "conv2d":
        return L.conv2d(x, w, b, spec.stride, spec.padding_mode)
    if k == "conv2d_transpose":
        return L.conv2d_transpose(x, w, b, spec.stride, spec.padding_mode)
    if k == "maxpool2d":
        return L.maxpool2d(x, spec.filter_size, spec.stride)
    if k == "activation":
        return L.activation_apply(x, spec.activation_kind)
    if k == "reshape":
        return reshape(x, (x.shape[0],) + spec.target_shape)
    if k == "flatten":
        return flatten(x)
    raise AssertionError(k)
