"""Uniform time grids on (0, T) and node-aligned partitions for cyclic sweeps."""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid with nodes t_n = n * tau for n = 0..step_count."""

    horizon: float
    step_count: int

    def __post_init__(self):
        if not self.horizon > 0.0:
            raise ValidationError(f"horizon must be positive, got {self.horizon}")
        if self.step_count < 1:
            raise ValidationError(f"step_count must be at least 1, got {self.step_count}")

    @property
    def tau(self) -> float:
        return self.horizon / self.step_count

    @property
    def node_count(self) -> int:
        return self.step_count + 1

    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.node_count)


def make_time_grid(horizon: float, step_count: int) -> TimeGrid:
    """Build a uniform grid on (0, horizon) with the given number of steps."""
    return TimeGrid(float(horizon), int(step_count))


@dataclass(frozen=True)
class KaczmarzPartition:
    """Uniform split of a time grid into slabs whose breakpoints sit on grid nodes.

    Slab j covers nodes [j*N/m, (j+1)*N/m]; adjacent slabs share their
    breakpoint node.  The cyclic slab index for iteration k is k mod m.
    """

    grid: TimeGrid
    slab_count: int

    def __post_init__(self):
        if self.slab_count < 1:
            raise ValidationError(f"slab_count must be at least 1, got {self.slab_count}")
        if self.grid.step_count % self.slab_count != 0:
            raise ValidationError(
                f"slab_count {self.slab_count} does not divide "
                f"step_count {self.grid.step_count}; breakpoints must land on nodes"
            )

    @property
    def nodes_per_slab(self) -> int:
        return self.grid.step_count // self.slab_count

    def breakpoints(self) -> np.ndarray:
        return np.linspace(0.0, self.grid.horizon, self.slab_count + 1)

    def slab_index(self, k: int) -> int:
        return k % self.slab_count

    def node_range(self, j: int) -> tuple[int, int]:
        """Inclusive node span [lo, hi] covered by slab j."""
        self._check(j)
        step = self.nodes_per_slab
        return j * step, (j + 1) * step

    def weighted_nodes(self, j: int) -> slice:
        """Nodes of slab j that carry quadrature weight (right endpoints)."""
        lo, hi = self.node_range(j)
        return slice(lo + 1, hi + 1)

    def _check(self, j: int):
        if not 0 <= j < self.slab_count:
            raise ValidationError(f"slab index {j} out of range [0, {self.slab_count})")


def make_partition(grid: TimeGrid, slab_count: int) -> KaczmarzPartition:
    """Partition the horizon into slab_count uniform slabs aligned to grid nodes."""
    return KaczmarzPartition(grid, int(slab_count))
