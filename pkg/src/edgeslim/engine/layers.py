"""Per-kind parameter layouts and forward builders.

Weight matrices are maskable (connection dropout), biases are not.  Recurrent
cells keep one ``(I+O, O)`` matrix and one bias per gate block so a gate can
be re-initialised or dropped wholesale when the cell is rewritten to its
reduced form.  The coupled LSTM derives its input gate as ``1 - f``; the
minimal gated cell uses its single forget gate both to gate the candidate
input and to blend the new state.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from edgeslim.archspec import LayerKind, LayerSpec
from edgeslim.engine import autodiff as ad
from edgeslim.engine.autodiff import Tensor, _node, sigmoid, tanh


class ParamDef(NamedTuple):
    name: str
    shape: tuple[int, ...]
    masked: bool
    fans: tuple[int, int] | None  # (fan_in, fan_out); None for zero-init biases


GATE_NAMES = {
    LayerKind.LSTM: ("i", "f", "o", "g"),
    LayerKind.COUPLED_LSTM: ("f", "o", "g"),
    LayerKind.GRU: ("z", "r", "h"),
    LayerKind.MGU: ("f", "h"),
}


def param_layout(layer: LayerSpec) -> list[ParamDef]:
    """Ordered parameter definitions for one layer; order fixes RNG draws."""
    I, O = layer.I, layer.O
    kind = layer.kind
    if kind == LayerKind.FC:
        return [
            ParamDef("W", (I, O), True, (I, O)),
            ParamDef("b", (O,), False, None),
        ]
    if kind == LayerKind.CONV:
        f, g = layer.f, layer.g
        return [
            ParamDef("W", (O, I, f, g), True, (I * f * g, O * f * g)),
            ParamDef("b", (O,), False, None),
        ]
    if kind == LayerKind.FACTORIZED_FC:
        R = layer.R
        return [
            ParamDef("W1", (I, R), True, (I, R)),
            ParamDef("b1", (R,), False, None),
            ParamDef("W2", (R, O), True, (R, O)),
            ParamDef("b2", (O,), False, None),
        ]
    if kind == LayerKind.FACTORIZED_CONV:
        f, g, R = layer.f, layer.g, layer.R
        return [
            ParamDef("W1", (R, I, f, g), True, (I * f * g, R * f * g)),
            ParamDef("b1", (R,), False, None),
            ParamDef("W2", (R, O), True, (R, O)),
            ParamDef("b2", (O,), False, None),
        ]
    if kind in GATE_NAMES:
        defs = []
        for gate in GATE_NAMES[kind]:
            defs.append(ParamDef(f"W{gate}", (I + O, O), True, (I + O, O)))
        for gate in GATE_NAMES[kind]:
            defs.append(ParamDef(f"b{gate}", (O,), False, None))
        return defs
    raise ValueError(f"no parameter layout for kind {kind!r}")


def channel_mix(x: Tensor, weight: Tensor) -> Tensor:
    """1x1 channel mixing: (n,R,h,w) with (R,O) -> (n,O,h,w)."""
    xd, wd = x.data, weight.data
    out_data = np.einsum("nrij,ro->noij", xd, wd)

    def bwd(g):
        if weight.requires_grad:
            weight._accum(np.einsum("noij,nrij->ro", g, xd))
        if x.requires_grad:
            x._accum(np.einsum("noij,ro->nrij", g, wd))

    return _node(out_data, (x, weight), bwd)


def _gate_inputs(params: dict[str, Tensor], gate: str, I: int):
    """Split the (I+O, O) gate matrix into input-side and state-side halves."""
    W = params[f"W{gate}"]
    return W[:I], W[I:], params[f"b{gate}"]


def _dense_forward(x: Tensor, params: dict[str, Tensor]) -> Tensor:
    return x @ params["W"] + params["b"]


def _factorized_fc_forward(x: Tensor, params: dict[str, Tensor]) -> Tensor:
    # No nonlinearity between factors: together they stand in for one layer.
    return (x @ params["W1"] + params["b1"]) @ params["W2"] + params["b2"]


def _conv_forward(x: Tensor, layer: LayerSpec, params: dict[str, Tensor]) -> Tensor:
    n = x.data.shape[0]
    H, W = layer.input_spatial
    x4 = x.reshape(n, layer.I, H, W)
    out = ad.conv2d(x4, params["W"], layer.h, layer.w)
    return out + params["b"].reshape(1, layer.O, 1, 1)


def _factorized_conv_forward(x: Tensor, layer: LayerSpec, params: dict[str, Tensor]) -> Tensor:
    n = x.data.shape[0]
    H, W = layer.input_spatial
    x4 = x.reshape(n, layer.I, H, W)
    mid = ad.conv2d(x4, params["W1"], layer.h, layer.w)
    mid = mid + params["b1"].reshape(1, layer.R, 1, 1)
    out = channel_mix(mid, params["W2"])
    return out + params["b2"].reshape(1, layer.O, 1, 1)


def _recurrent_forward(x: Tensor, layer: LayerSpec, params: dict[str, Tensor]) -> Tensor:
    n = x.data.shape[0]
    I, O, s = layer.I, layer.O, layer.s
    x3 = x.reshape(n, s, I)
    kind = layer.kind
    halves = {gate: _gate_inputs(params, gate, I) for gate in GATE_NAMES[kind]}
    dtype = x.data.dtype
    h = ad.lift(np.zeros((n, O), dtype=dtype))
    c = ad.lift(np.zeros((n, O), dtype=dtype)) if kind in (
        LayerKind.LSTM,
        LayerKind.COUPLED_LSTM,
    ) else None

    def gate(name, xt, state, pre=None):
        Wx, Wh, b = halves[name]
        return xt @ Wx + (state if pre is None else pre) @ Wh + b

    for t in range(s):
        xt = x3[:, t, :]
        if kind == LayerKind.LSTM:
            i = sigmoid(gate("i", xt, h))
            f = sigmoid(gate("f", xt, h))
            o = sigmoid(gate("o", xt, h))
            g = tanh(gate("g", xt, h))
            c = f * c + i * g
            h = o * tanh(c)
        elif kind == LayerKind.COUPLED_LSTM:
            f = sigmoid(gate("f", xt, h))
            o = sigmoid(gate("o", xt, h))
            g = tanh(gate("g", xt, h))
            c = f * c + (1.0 - f) * g
            h = o * tanh(c)
        elif kind == LayerKind.GRU:
            z = sigmoid(gate("z", xt, h))
            r = sigmoid(gate("r", xt, h))
            cand = tanh(gate("h", xt, h, pre=r * h))
            h = (1.0 - z) * h + z * cand
        else:  # MGU
            f = sigmoid(gate("f", xt, h))
            cand = tanh(gate("h", xt, h, pre=f * h))
            h = (1.0 - f) * h + f * cand
    return h


def layer_forward(layer: LayerSpec, params: dict[str, Tensor], x: Tensor) -> Tensor:
    """Apply one layer to a flat (n, input_width) Tensor.

    Returns the natural-shape output: (n,O) for dense and recurrent kinds,
    (n,O,h,w) for conv kinds.  The caller flattens before the next layer.
    """
    kind = layer.kind
    if kind == LayerKind.FC:
        return _dense_forward(x, params)
    if kind == LayerKind.FACTORIZED_FC:
        return _factorized_fc_forward(x, params)
    if kind == LayerKind.CONV:
        return _conv_forward(x, layer, params)
    if kind == LayerKind.FACTORIZED_CONV:
        return _factorized_conv_forward(x, layer, params)
    if kind in GATE_NAMES:
        return _recurrent_forward(x, layer, params)
    raise ValueError(f"no forward rule for kind {kind!r}")
