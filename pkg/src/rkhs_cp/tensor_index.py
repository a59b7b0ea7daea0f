"""Multi-index arithmetic for the mode-k unfolding.

Conventions (used by every file format and operator in the package):

* all indices are 0-based;
* the unfolding column index strides over the non-k modes in ascending
  mode order, the first remaining mode varying fastest;
* ``vec`` stacks columns (column-major / Fortran order).
"""
from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Sequence

import numpy as np

from .errors import DomainError, ValidationError


@dataclass(frozen=True)
class Shape:
    """Tensor dimensions together with the mode being solved for."""

    dims: tuple[int, ...]
    mode: int

    def __post_init__(self):
        dims = tuple(int(x) for x in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) < 2:
            raise ValidationError(f"need at least 2 modes, got {len(dims)}")
        if any(x < 1 for x in dims):
            raise ValidationError(f"every dimension must be >= 1, got {dims}")
        if not 0 <= self.mode < len(dims):
            raise ValidationError(f"mode {self.mode} outside [0, {len(dims)})")

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def N(self) -> int:
        return prod(self.dims)

    @property
    def n(self) -> int:
        return self.dims[self.mode]

    @property
    def M(self) -> int:
        return self.N // self.n

    @property
    def other_modes(self) -> tuple[int, ...]:
        return tuple(l for l in range(self.d) if l != self.mode)

    @property
    def strides(self) -> tuple[int, ...]:
        """Column strides ``J_l`` for each non-k mode, ascending mode order."""
        out = []
        J = 1
        for l in self.other_modes:
            out.append(J)
            J *= self.dims[l]
        return tuple(out)


@dataclass(frozen=True)
class ModeKCoordinate:
    row: int
    col: int


def _check_multi_index(shape: Shape, multi_index: Sequence[int]) -> None:
    if len(multi_index) != shape.d:
        raise DomainError(f"multi-index has {len(multi_index)} entries, expected {shape.d}")
    for axis, (i, n_l) in enumerate(zip(multi_index, shape.dims)):
        if not 0 <= i < n_l:
            raise DomainError(f"index {i} out of range [0, {n_l}) on axis {axis}")


def mode_k_coords(shape: Shape, multi_index: Sequence[int]) -> ModeKCoordinate:
    """Map a tensor multi-index to its (row, col) in the mode-k unfolding."""
    _check_multi_index(shape, multi_index)
    col = sum(multi_index[l] * J for l, J in zip(shape.other_modes, shape.strides))
    return ModeKCoordinate(int(multi_index[shape.mode]), int(col))


def mode_k_coords_array(shape: Shape, indices) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`mode_k_coords` over a ``(q, d)`` integer array.

    Returns ``(rows, cols)`` as int64 arrays of length q.
    """
    idx = np.asarray(indices, dtype=np.int64).reshape(-1, shape.d)
    for axis, n_l in enumerate(shape.dims):
        bad = np.flatnonzero((idx[:, axis] < 0) | (idx[:, axis] >= n_l))
        if bad.size:
            i = idx[bad[0], axis]
            raise DomainError(f"index {i} out of range [0, {n_l}) on axis {axis} (entry {bad[0]})")
    cols = np.zeros(len(idx), dtype=np.int64)
    for l, J in zip(shape.other_modes, shape.strides):
        cols += idx[:, l] * J
    return idx[:, shape.mode].copy(), cols


def multi_index_from_coords(shape: Shape, coord: ModeKCoordinate) -> tuple[int, ...]:
    """Inverse of :func:`mode_k_coords`."""
    row, col = coord.row, coord.col
    if not 0 <= row < shape.n:
        raise DomainError(f"row {row} out of range [0, {shape.n})")
    if not 0 <= col < shape.M:
        raise DomainError(f"col {col} out of range [0, {shape.M})")
    out = [0] * shape.d
    out[shape.mode] = row
    for l in shape.other_modes:
        col, out[l] = divmod(col, shape.dims[l])
    return tuple(out)


def multi_indices_from_cols(shape: Shape, cols) -> np.ndarray:
    """Decode flattened unfolding columns into a ``(len(cols), d)`` array.

    The mode-k entry of each returned row is left at zero.
    """
    rem = np.asarray(cols, dtype=np.int64).copy()
    out = np.zeros((rem.size, shape.d), dtype=np.int64)
    for l in shape.other_modes:
        rem, out[:, l] = np.divmod(rem, shape.dims[l])
    return out


def vec_index(n_rows: int, row: int, col: int) -> int:
    """Position of ``(row, col)`` in the column-stacked vector of an ``n_rows``-row matrix."""
    if not 0 <= row < n_rows:
        raise DomainError(f"row {row} out of range [0, {n_rows})")
    if col < 0:
        raise DomainError(f"col {col} is negative")
    return row + col * n_rows


def vec(X: np.ndarray) -> np.ndarray:
    return np.asarray(X).reshape(-1, order="F")


def unvec(x: np.ndarray, n_rows: int) -> np.ndarray:
    return np.asarray(x).reshape(n_rows, -1, order="F")
