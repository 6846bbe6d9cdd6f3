"""Grid partitioning of a scene into fixed-size, centred blocks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import Block, PointCloud


class PartitionError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    # blocks per forward/backward pass; gradients of a batch accumulate over chunks
    micro_batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 2e-4
    epochs: int = 10
    seed: int = 0
    points_per_block: int = 4096
    block_size_m: float = 1.0
    eval_every: int = 1
    lambda_max: object = "bound2"
    checkpoint: Optional[str] = None

    def __post_init__(self):
        if self.batch_size < 1 or self.micro_batch_size < 1:
            raise ValueError(
                f"batch_size and micro_batch_size must be >= 1, got {self.batch_size}, {self.micro_batch_size}"
            )
        if self.points_per_block < 2:
            raise ValueError(f"points_per_block must be >= 2, got {self.points_per_block}")
        if not self.block_size_m > 0:
            raise ValueError(f"block_size_m must be > 0, got {self.block_size_m}")
        if self.epochs < 0 or self.eval_every < 1:
            raise ValueError("epochs must be >= 0 and eval_every >= 1")


def grid_cells(xyz: np.ndarray, size: float) -> dict:
    """(i, j) -> ascending point indices, for cells of ``size`` x ``size`` anchored at the XY minimum."""
    ij = np.floor((xyz[:, :2] - xyz[:, :2].min(axis=0)) / size).astype(np.int64)
    order = np.lexsort((np.arange(len(ij)), ij[:, 1], ij[:, 0]))
    ij_sorted = ij[order]
    breaks = np.flatnonzero(np.any(np.diff(ij_sorted, axis=0) != 0, axis=1)) + 1
    cells = {}
    for group in np.split(order, breaks):
        i, j = ij[group[0]]
        cells[(int(i), int(j))] = group
    return cells


def sample_cell(indices: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly ``size`` source indices: without replacement when the cell is large enough,
    otherwise every point once plus uniform draws with replacement, shuffled."""
    if len(indices) >= size:
        return rng.choice(indices, size=size, replace=False)
    pad = rng.choice(indices, size=size - len(indices), replace=True)
    return rng.permutation(np.concatenate([indices, pad]))


def partition_blocks(cloud: PointCloud, cfg: TrainConfig, rng: np.random.Generator) -> list[Block]:
    """Blocks for every grid cell with >= 2 points, in (i, j) order.

    Coordinates are shifted by the cell's XY centroid and minimum z.
    """
    if len(cloud) == 0:
        raise PartitionError("cannot partition an empty cloud")
    blocks = []
    for (i, j), members in grid_cells(cloud.xyz, cfg.block_size_m).items():
        if len(members) < 2:
            continue
        chosen = sample_cell(members, cfg.points_per_block, rng)
        cell_xyz = cloud.xyz[members]
        shift = np.array([*cell_xyz[:, :2].mean(axis=0), cell_xyz[:, 2].min()])
        sub = cloud.subset(chosen)
        blocks.append(Block((i, j), PointCloud(sub.xyz - shift, sub.attributes, sub.labels), chosen))
    if not blocks:
        raise PartitionError("every grid cell has fewer than 2 points; no block can be formed")
    return blocks
