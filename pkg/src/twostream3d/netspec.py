"""Declarative layer-stack descriptions and the compact architecture grammar.

A network is written as dash-separated tokens, parsed case-insensitively:

    C(k,n,s)        3D convolution, k*k*k kernel, n filters, stride s*s*s
    P(k1,k2,s1,s2)  3D max pooling, temporal kernel k1 / stride s1,
                    spatial kernel k2*k2 / stride s2
    FC(n)           fully connected layer, n outputs
    SM(m)           softmax output head over m classes
    DC(N)           bias-free linear code head, N outputs (optional, last)

Example (the reference large architecture):

    C(3,64,1)-P(1,2,1,2)-C(3,128,1)-P(2,2,2,2)-C(3,256,1)-C(3,256,1)-
    P(2,2,2,2)-C(3,512,1)-C(3,512,1)-P(2,2,2,2)-C(3,512,1)-C(3,512,1)-
    P(2,2,2,2)-FC(4096)-FC(4096)-SM(12)-DC(4096)

A ReLU follows every convolution and fully connected layer by convention;
there is no token for it. Pooling uses ceil-mode output sizing with
boundary-clipped windows and convolutions are zero-padded by (k-1)//2 per
spatiotemporal axis: the only pair of conventions under which the large
architecture maps 3x16x112x112 clips to the 512x1x4x4 pool5 grid.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass


@dataclass(frozen=True)
class Conv3D:
    kernel: int
    filters: int
    stride: int

    def __post_init__(self):
        if min(self.kernel, self.filters, self.stride) < 1:
            raise ValueError(f"invalid conv spec {self}")

    @property
    def pad(self) -> int:
        return (self.kernel - 1) // 2

    def token(self) -> str:
        return f"C({self.kernel},{self.filters},{self.stride})"


@dataclass(frozen=True)
class Pool3D:
    kernel_t: int
    kernel_s: int
    stride_t: int
    stride_s: int

    def __post_init__(self):
        if min(self.kernel_t, self.kernel_s, self.stride_t, self.stride_s) < 1:
            raise ValueError(f"invalid pool spec {self}")

    def token(self) -> str:
        return f"P({self.kernel_t},{self.kernel_s},{self.stride_t},{self.stride_s})"


@dataclass(frozen=True)
class FC:
    width: int

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"invalid fc width {self.width}")

    def token(self) -> str:
        return f"FC({self.width})"


@dataclass(frozen=True)
class ReLU:
    """Explicit activation marker; inserted automatically after C and FC."""

    def token(self) -> str:
        return "RELU"


@dataclass(frozen=True)
class Softmax:
    classes: int

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError(f"softmax needs >= 2 classes, got {self.classes}")

    def token(self) -> str:
        return f"SM({self.classes})"


@dataclass(frozen=True)
class CodeLayer:
    width: int

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"invalid code layer width {self.width}")

    def token(self) -> str:
        return f"DC({self.width})"


TrunkLayer = Conv3D | Pool3D | FC | ReLU
LayerSpec = Conv3D | Pool3D | FC | ReLU | Softmax | CodeLayer

_TOKEN_RE = re.compile(r"^([A-Z]+)\(([0-9,]+)\)$")
_KINDS = {"C": (Conv3D, 3), "P": (Pool3D, 4), "FC": (FC, 1), "SM": (Softmax, 1), "DC": (CodeLayer, 1)}


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered trunk layers plus the softmax head and optional code head."""

    trunk: tuple[TrunkLayer, ...]
    softmax: Softmax
    code: CodeLayer | None = None

    @property
    def classes(self) -> int:
        return self.softmax.classes

    @property
    def code_width(self) -> int | None:
        return self.code.width if self.code is not None else None

    def without_code_head(self) -> "NetworkSpec":
        return NetworkSpec(self.trunk, self.softmax, None)

    def to_string(self) -> str:
        tokens = [sp.token() for sp in self.trunk if not isinstance(sp, ReLU)]
        tokens.append(self.softmax.token())
        if self.code is not None:
            tokens.append(self.code.token())
        return "-".join(tokens)


def parse_spec(text: str) -> NetworkSpec:
    """Parse an architecture string into a :class:`NetworkSpec`.

    The grammar is dash-separated; unicode dashes and doubled dashes are
    tolerated, case is ignored, whitespace is stripped.
    """
    normalized = re.sub(r"[‐-―−]", "-", text).upper()
    normalized = re.sub(r"\s+", "", normalized)
    tokens = [t for t in normalized.split("-") if t]
    if not tokens:
        raise ValueError("empty architecture string")

    layers: list[LayerSpec] = []
    for tok in tokens:
        m = _TOKEN_RE.match(tok)
        if not m:
            raise ValueError(f"cannot parse layer token {tok!r}")
        kind, argstr = m.group(1), m.group(2)
        if kind not in _KINDS:
            raise ValueError(f"unknown layer kind {kind!r} in token {tok!r}")
        cls, arity = _KINDS[kind]
        args = [int(x) for x in argstr.split(",") if x != ""]
        if len(args) != arity:
            raise ValueError(f"{kind} expects {arity} integers, got {tok!r}")
        layers.append(cls(*args))

    trunk: list[TrunkLayer] = []
    softmax: Softmax | None = None
    code: CodeLayer | None = None
    for sp in layers:
        if isinstance(sp, Softmax):
            if softmax is not None:
                raise ValueError("multiple SM tokens")
            if code is not None:
                raise ValueError("SM must precede DC")
            softmax = sp
        elif isinstance(sp, CodeLayer):
            if code is not None:
                raise ValueError("multiple DC tokens")
            if softmax is None:
                raise ValueError("DC must follow SM")
            code = sp
        else:
            if softmax is not None:
                raise ValueError(f"trunk layer {sp.token()} after the SM head")
            trunk.append(sp)
            if isinstance(sp, (Conv3D, FC)):
                trunk.append(ReLU())
    if softmax is None:
        raise ValueError("architecture needs exactly one SM(m) head")
    return NetworkSpec(tuple(trunk), softmax, code)


def _pool_extent(n: int, k: int, s: int) -> int:
    if n < k:
        raise ValueError(f"pool kernel {k} larger than axis extent {n}")
    return math.ceil((n - k) / s) + 1


def _conv_extent(n: int, k: int, s: int, p: int) -> int:
    padded = n + 2 * p
    if padded < k:
        raise ValueError(f"conv kernel {k} larger than padded extent {padded}")
    return (padded - k) // s + 1


def layer_output_shape(spec: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Output shape of a single layer, computed without running data.

    Volume layers take and produce (channels, t, h, w); FC and the heads
    flatten whatever they receive.
    """
    if isinstance(spec, Conv3D):
        c, t, h, w = shape
        return (
            spec.filters,
            _conv_extent(t, spec.kernel, spec.stride, spec.pad),
            _conv_extent(h, spec.kernel, spec.stride, spec.pad),
            _conv_extent(w, spec.kernel, spec.stride, spec.pad),
        )
    if isinstance(spec, Pool3D):
        c, t, h, w = shape
        return (
            c,
            _pool_extent(t, spec.kernel_t, spec.stride_t),
            _pool_extent(h, spec.kernel_s, spec.stride_s),
            _pool_extent(w, spec.kernel_s, spec.stride_s),
        )
    if isinstance(spec, FC):
        return (spec.width,)
    if isinstance(spec, ReLU):
        return shape
    if isinstance(spec, Softmax):
        return (spec.classes,)
    if isinstance(spec, CodeLayer):
        return (spec.width,)
    raise TypeError(f"unknown layer spec {spec!r}")


def infer_shapes(spec: NetworkSpec, input_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Per-stage shapes for one sample: input, each trunk layer, then heads.

    The returned list starts with ``input_shape``, then one entry per trunk
    layer (ReLU entries included), then the softmax head and, if present,
    the code head.
    """
    shapes = [tuple(input_shape)]
    cur = tuple(input_shape)
    for sp in spec.trunk:
        cur = layer_output_shape(sp, cur)
        shapes.append(cur)
    shapes.append(layer_output_shape(spec.softmax, cur))
    if spec.code is not None:
        shapes.append(layer_output_shape(spec.code, cur))
    return shapes


def feature_width(spec: NetworkSpec, input_shape: tuple[int, ...]) -> int:
    """Flattened width of the representation the heads read."""
    cur = tuple(input_shape)
    for sp in spec.trunk:
        cur = layer_output_shape(sp, cur)
    out = 1
    for s in cur:
        out *= int(s)
    return out
