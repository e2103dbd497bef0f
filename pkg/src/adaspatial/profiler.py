"""Parameter counts and analytic FLOP estimates.

Conventions: one multiply-accumulate is two FLOPs and bias adds are folded
into the accumulate; elementwise ops (add, mul, relu, sigmoid, the attention
scale) cost one FLOP per output element; a softmax costs five per element;
a 2x2 max pool costs three comparisons per output; nearest upsampling,
reshapes and transposes are free.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterator, NamedTuple

from .order.attention import BiAttnUnit
from .order.blocks import KERNELS, MkirBlock
from .order.config import NUM_STAGES
from .order.network import Conv1x1, OrderNetwork
from .tensor_core import Module


class UnsupportedLayerError(TypeError):
    pass


class Layer(NamedTuple):
    name: str
    kind: str
    dims: dict


@dataclass
class ProfileReport:
    total_params: int
    breakdown: dict[str, int]
    flops: int = 0
    macs: int = 0
    input_size: int | None = None
    flops_breakdown: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def count_params(net: Module) -> ProfileReport:
    breakdown: dict[str, int] = {}
    for name, p in net.named_parameters():
        top = name.split(".", 1)[0]
        breakdown[top] = breakdown.get(top, 0) + p.size
    return ProfileReport(sum(breakdown.values()), breakdown)


# -- layer plans -----------------------------------------------------------

def _conv(name, ci, co, k, h, w):
    return Layer(name, "conv", dict(ci=ci, co=co, k=k, h=h, w=w))


def _elem(name, kind, count):
    return Layer(name, kind, dict(count=count))


def _plan_conv1x1(mod: Conv1x1, name: str, h: int, w: int) -> Iterator[Layer]:
    co, ci = mod.w.shape[:2]
    yield _conv(name, ci, co, 1, h, w)


def _plan_mkir(mod: MkirBlock, name: str, h: int, w: int) -> Iterator[Layer]:
    c, hidden = mod.channels, mod.expand_w.shape[0]
    yield _conv(f"{name}.expand", c, hidden, 1, h, w)
    yield _elem(f"{name}.expand_relu", "relu", hidden * h * w)
    for k in KERNELS:
        yield Layer(f"{name}.dw{k}", "dwconv", dict(c=hidden, k=k, h=h, w=w))
        yield _elem(f"{name}.dw{k}_relu", "relu", hidden * h * w)
    yield _elem(f"{name}.branch_sum", "add", (len(KERNELS) - 1) * hidden * h * w)
    yield _conv(f"{name}.proj", hidden, c, 1, h, w)
    yield _elem(f"{name}.residual", "add", c * h * w)


def _plan_attention(mod: BiAttnUnit, name: str, h: int, w: int,
                    grid: int | None, gated: bool) -> Iterator[Layer]:
    c = mod.channels
    gh, gw = h, w
    if grid is not None and (h > grid or w > grid):
        gh, gw = min(h, grid), min(w, grid)
        for side in ("d", "e"):
            yield Layer(f"{name}.pool_{side}", "resample", dict(c=c, h=h, w=w, oh=gh, ow=gw))
    L = gh * gw
    for proj in ("q", "k", "vd", "ve"):
        yield _conv(f"{name}.{proj}", c, c, 1, gh, gw)
    yield Layer(f"{name}.scores", "matmul", dict(m=L, k=c, n=L))
    yield _elem(f"{name}.scale", "mul", L * L)
    yield _elem(f"{name}.softmax_rows", "softmax", L * L)
    yield _elem(f"{name}.softmax_cols", "softmax", L * L)
    yield Layer(f"{name}.attend_d", "matmul", dict(m=L, k=L, n=c))
    yield Layer(f"{name}.attend_e", "matmul", dict(m=L, k=L, n=c))
    if (gh, gw) != (h, w):
        for side in ("d", "e"):
            yield Layer(f"{name}.unpool_{side}", "resample", dict(c=c, h=gh, w=gw, oh=h, ow=w))
    if gated:
        yield _elem(f"{name}.gate_pool", "add", 2 * c * h * w)
        yield _elem(f"{name}.gate_pool_scale", "mul", 2 * c)
        yield Layer(f"{name}.gate_linear", "matmul", dict(m=1, k=2 * c, n=1))
        yield _elem(f"{name}.gate_bias", "add", 1)
        yield _elem(f"{name}.gate_sigmoid", "sigmoid", 1)
    yield _elem(f"{name}.gate_scale", "mul", 2 * c * h * w)
    yield _elem(f"{name}.residual", "add", 2 * c * h * w)


def _plan_network(net: OrderNetwork, h: int, w: int) -> Iterator[Layer]:
    cfg = net.cfg
    ch = cfg.channels
    sizes = [(h >> i, w >> i) for i in range(NUM_STAGES)]
    yield _conv("stem", cfg.in_channels, ch[0], 3, h, w)
    yield _elem("stem_relu", "relu", ch[0] * h * w)
    for i in range(NUM_STAGES):
        sh, sw = sizes[i]
        if i > 0:
            yield _elem(f"pool{i}", "maxpool", ch[i - 1] * sh * sw)
            yield from plan(getattr(net, f"down{i}"), f"down{i}", sh, sw)
        yield from plan(getattr(net, f"enc{i}"), f"enc{i}", sh, sw)
    for i in range(NUM_STAGES - 1, -1, -1):
        sh, sw = sizes[i]
        if i < NUM_STAGES - 1:
            ph, pw = sizes[i + 1]
            yield from plan(getattr(net, f"up{i}"), f"up{i}", ph, pw)
            yield _elem(f"upsample{i}", "upsample", ch[i] * sh * sw)
        if i in cfg.attn_stages:
            yield from _plan_attention(getattr(net, f"attn{i}"), f"attn{i}", sh, sw,
                                       cfg.attn_grid, cfg.gate_enabled)
        yield _elem(f"fuse{i}", "add", ch[i] * sh * sw)
        if i > 0:
            yield from plan(getattr(net, f"dec{i}"), f"dec{i}", sh, sw)
    yield from plan(net.head, "head", h, w)
    yield _elem("head_sigmoid", "sigmoid", h * w)


def plan(mod: Module, name: str, h: int, w: int) -> Iterator[Layer]:
    """Primitive layers executed by ``mod`` on one ``h x w`` input."""
    if isinstance(mod, OrderNetwork):
        yield from _plan_network(mod, h, w)
    elif isinstance(mod, MkirBlock):
        yield from _plan_mkir(mod, name, h, w)
    elif isinstance(mod, Conv1x1):
        yield from _plan_conv1x1(mod, name, h, w)
    elif isinstance(mod, BiAttnUnit):
        yield from _plan_attention(mod, name, h, w, None, True)
    else:
        raise UnsupportedLayerError(f"no FLOP rule for {type(mod).__name__}")


def _resample_macs(d):
    # rows first, then columns, per channel
    return d["c"] * (d["oh"] * d["h"] * d["w"] + d["oh"] * d["w"] * d["ow"])


MAC_RULES = {
    "conv": lambda d: d["co"] * d["ci"] * d["k"] ** 2 * d["h"] * d["w"],
    "dwconv": lambda d: d["c"] * d["k"] ** 2 * d["h"] * d["w"],
    "matmul": lambda d: d["m"] * d["k"] * d["n"],
    "resample": _resample_macs,
}
ELEMENT_COST = {"add": 1, "mul": 1, "relu": 1, "sigmoid": 1, "softmax": 5, "maxpool": 3, "upsample": 0}


def layer_flops(layer: Layer) -> tuple[int, int]:
    """Return ``(flops, macs)`` for one primitive layer."""
    if layer.kind in MAC_RULES:
        macs = MAC_RULES[layer.kind](layer.dims)
        return 2 * macs, macs
    if layer.kind in ELEMENT_COST:
        return ELEMENT_COST[layer.kind] * layer.dims["count"], 0
    raise UnsupportedLayerError(f"unknown layer kind {layer.kind!r} at {layer.name}")


def estimate_flops(net: Module, input_size: int | tuple[int, int]) -> ProfileReport:
    """Per-image FLOPs of a forward pass at ``input_size``, plus parameter counts."""
    h, w = (input_size, input_size) if isinstance(input_size, int) else input_size
    if isinstance(net, OrderNetwork) and (h % 16 or w % 16):
        raise ValueError(f"input size {h}x{w} is not divisible by 16")
    report = count_params(net)
    report.input_size = h if h == w else None
    for layer in plan(net, type(net).__name__, h, w):
        f, m = layer_flops(layer)
        report.flops += f
        report.macs += m
        top = layer.name.split(".", 1)[0]
        report.flops_breakdown[top] = report.flops_breakdown.get(top, 0) + f
    return report
