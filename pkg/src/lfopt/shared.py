"""Lock-free shared parameter store.

A ParameterBlock is a flat float64 array shared by reference across worker
threads.  The only guarantee is per-cell word atomicity: an aligned 64-bit
load or store never tears.  There is no cross-cell consistency; snapshots
taken while writers run may mix updates.  write_saxpy performs its
read-modify-write as two separate array operations on purpose, so a
concurrent write landing between them is overwritten (lost update) -- that is
the intended overwrite semantics of the unsynchronized update model.
"""

from __future__ import annotations

import numpy as np

from .models import GradientBuffer


class ParameterBlock:
    """Fixed-length array of 64-bit scalar cells shared by all workers."""

    __slots__ = ("cells",)

    def __init__(self, init: int | np.ndarray) -> None:
        if isinstance(init, (int, np.integer)):
            if init < 1:
                raise ValueError("length must be >= 1")
            self.cells = np.zeros(int(init))
        else:
            arr = np.array(init, dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError("init vector must be 1-D")
            self.cells = arr

    @classmethod
    def wrapping(cls, array: np.ndarray) -> "ParameterBlock":
        """Share the caller's storage without copying."""
        if not isinstance(array, np.ndarray) or array.dtype != np.float64 or array.ndim != 1:
            raise ValueError("need a 1-D float64 array")
        if not array.flags.c_contiguous:
            raise ValueError("array must be contiguous")
        block = cls.__new__(cls)
        block.cells = array
        return block

    def __len__(self) -> int:
        return self.cells.shape[0]


def read_snapshot(block: ParameterBlock) -> np.ndarray:
    """Copy every cell without locks; may mix concurrent updates."""
    return block.cells.copy()


def write_saxpy(block: ParameterBlock, step: float, grad: GradientBuffer) -> None:
    """cell[k] <- cell[k] - step * grad[k] over grad's support, lock-free.

    The load and the store are distinct operations; writes from other threads
    arriving in between are lost.
    """
    if grad.dim != len(block):
        raise ValueError(f"dimension mismatch: {grad.dim} != {len(block)}")
    if grad.support is None:
        current = block.cells.copy()
        block.cells[:] = current - step * grad.values
    else:
        idx = grad.support
        if idx.size == 0:
            return
        current = block.cells[idx]
        block.cells[idx] = current - step * grad.values[idx]


def store_all(block: ParameterBlock, v: np.ndarray) -> None:
    """Overwrite every cell; caller guarantees no concurrent writers."""
    if v.shape[0] != len(block):
        raise ValueError(f"dimension mismatch: {v.shape[0]} != {len(block)}")
    block.cells[:] = v
