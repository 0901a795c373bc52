"""Densely connected convolutional module.

Layer ``l`` (1..5) sees the 1x1-projected, activated outputs of every layer
``0..l-2`` plus the raw output of layer ``l-1``; a linear 1x1 fusion merges
them and a 3x3 convolution with a leaky rectifier produces ``M_l``. Layer 1
has nothing to fuse and is a plain 3x3 convolution of the input.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import numeric as nm

LAYERS = 5


@dataclass
class DccmConfig:
    channels: int = 32
    layer_count: int = LAYERS
    slope: float = nm.LEAKY_SLOPE

    def __post_init__(self):
        if self.layer_count != LAYERS:
            raise ValueError(f"a DCCM has exactly {LAYERS} layers, got {self.layer_count}")
        if self.channels < 1:
            raise ValueError("DCCM channel count must be positive")


@dataclass
class DccmParams:
    convs: list[nm.Conv]        # 3x3, one per layer
    projections: list[nm.Conv]  # g_k, 1x1 on M_k, k = 0..3
    fusions: list[nm.Conv]      # H_b for layers 2..5, 1x1

    @classmethod
    def create(cls, store: nm.ParamStore, path: str, in_channels: int, config: DccmConfig) -> "DccmParams":
        n = config.channels
        convs = [store.conv(f"{path}.conv{l}", in_channels if l == 1 else n, n, 3)
                 for l in range(1, LAYERS + 1)]
        projections = [store.conv(f"{path}.proj{k}", in_channels if k == 0 else n, n, 1)
                       for k in range(LAYERS - 1)]
        fusions = [store.conv(f"{path}.fuse{l}", l * n, n, 1) for l in range(2, LAYERS + 1)]
        return cls(convs, projections, fusions)


def projection_sources(layer: int) -> list[int]:
    """Indices ``k`` whose projection ``g_k(M_k)`` feeds layer ``layer``."""
    return list(range(max(0, layer - 1)))


def dccm_forward(x: nm.Tensor, params: DccmParams, config: DccmConfig) -> nm.Tensor:
    """Run the block on ``(B, C, J, T)``; returns ``(B, N, J, T)``."""
    return dccm_layers(x, params, config)[-1]


def dccm_layers(x: nm.Tensor, params: DccmParams, config: DccmConfig) -> list[nm.Tensor]:
    """All layer outputs ``[M_0, M_1, ..., M_5]``."""
    if x.shape[1] != params.convs[0].weight.shape[1]:
        raise nm.ShapeError(
            f"DCCM expects {params.convs[0].weight.shape[1]} input channels, got input {x.shape}"
        )
    maps = [x]
    projected: list[nm.Tensor] = []
    for layer in range(1, LAYERS + 1):
        if layer == 1:
            fused = x
        else:
            k = layer - 2
            projected.append(nm.leaky_relu(params.projections[k](maps[k]), config.slope))
            fused = params.fusions[layer - 2](nm.concat_channels(projected + [maps[-1]]))
        maps.append(nm.leaky_relu(params.convs[layer - 1](fused), config.slope))
    return maps
