"""Architecture strings and layer specifications for the built-in CNN.

A spec string uses the compact block notation, e.g. ``"ccm8 ccm16 fcr64
fcs5"``: each ``c`` is a shape-preserving 3x3 ReLU convolution, ``m`` a 2x2
stride-2 max-pool, ``fcr``/``fcs`` fully-connected ReLU/softmax layers; the
numeric suffix is the channel count or layer width. Dropout follows each
hidden fully-connected layer when a nonzero rate is configured.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

CONV = "conv3x3_relu"
POOL = "maxpool2x2"
FC_RELU = "fc_relu"
FC_SOFTMAX = "fc_softmax"
DROPOUT = "dropout"

_BLOCK_RE = re.compile(r"^(c+)(m?)(\d+)$")
_FC_RE = re.compile(r"^fc([rs])(\d+)$")


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    width: int = 0
    dropout_rate: float = 0.0


def parse_arch(arch: str, dropout_rate: float = 0.5) -> tuple[LayerSpec, ...]:
    """Expand a spec string into an ordered layer list."""
    tokens = arch.split()
    if not tokens:
        raise InvalidSpec("empty architecture string")
    layers: list[LayerSpec] = []
    for tok in tokens:
        m = _BLOCK_RE.match(tok)
        if m:
            convs, pool, width = m.groups()
            layers.extend(LayerSpec(CONV, int(width)) for _ in convs)
            if pool:
                layers.append(LayerSpec(POOL))
            continue
        m = _FC_RE.match(tok)
        if m:
            act, width = m.groups()
            if act == "r":
                layers.append(LayerSpec(FC_RELU, int(width)))
                if dropout_rate > 0:
                    layers.append(LayerSpec(DROPOUT, dropout_rate=dropout_rate))
            else:
                layers.append(LayerSpec(FC_SOFTMAX, int(width)))
            continue
        raise InvalidSpec(f"unrecognized token {tok!r} in {arch!r}")
    if layers[-1].kind != FC_SOFTMAX:
        raise InvalidSpec("architecture must end with an fcs layer")
    if any(l.kind == FC_SOFTMAX for l in layers[:-1]):
        raise InvalidSpec("fcs must be the final layer")
    return tuple(layers)


def layer_shapes(
    layers: tuple[LayerSpec, ...], input_hw: tuple[int, int], in_channels: int = 3
) -> list[tuple[int, ...]]:
    """Per-layer output shapes, (c, h, w) for spatial layers and (width,)
    after flattening; validates the chain is well-formed."""
    h, w = input_hw
    c = in_channels
    flat = None
    shapes: list[tuple[int, ...]] = []
    for spec in layers:
        if spec.kind == CONV:
            if flat is not None:
                raise InvalidSpec("convolution after a fully-connected layer")
            c = spec.width
            shapes.append((c, h, w))
        elif spec.kind == POOL:
            if flat is not None:
                raise InvalidSpec("pooling after a fully-connected layer")
            if h < 2 or w < 2:
                raise InvalidSpec(f"cannot pool a {h}x{w} map")
            h, w = h // 2, w // 2
            shapes.append((c, h, w))
        elif spec.kind in (FC_RELU, FC_SOFTMAX):
            if flat is None:
                flat = c * h * w
            flat = spec.width
            shapes.append((flat,))
        elif spec.kind == DROPOUT:
            if flat is None:
                raise InvalidSpec("dropout only follows fully-connected layers")
            shapes.append((flat,))
        else:  # pragma: no cover
            raise InvalidSpec(f"unknown layer kind {spec.kind!r}")
    return shapes


def flatten_width(
    layers: tuple[LayerSpec, ...], input_hw: tuple[int, int], in_channels: int = 3
) -> int:
    """Input width of the first fully-connected layer."""
    h, w = input_hw
    c = in_channels
    for spec in layers:
        if spec.kind == CONV:
            c = spec.width
        elif spec.kind == POOL:
            h, w = h // 2, w // 2
        else:
            return c * h * w
    raise InvalidSpec("architecture has no fully-connected layer")
