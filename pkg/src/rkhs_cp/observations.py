"""Observed tensor entries and their cached Khatri-Rao rows.

The selection matrix S and the zero-filled unfolding T are never formed:
an :class:`ObservationSet` stores only the q observed ``(row, col, value)``
triples plus the matching Khatri-Rao rows ``Z_Omega`` (q x r).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, ValidationError
from .tensor_index import Shape, mode_k_coords_array, multi_index_from_coords, ModeKCoordinate


@dataclass(frozen=True)
class FactorSet:
    """Fixed CP factors for every mode except k, ascending mode order."""

    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = tuple(np.asarray(A, dtype=np.float64) for A in self.factors)
        if not mats:
            raise ValidationError("FactorSet needs at least one factor matrix")
        for A in mats:
            if A.ndim != 2:
                raise ValidationError(f"factor matrices must be 2-D, got shape {A.shape}")
        ranks = {A.shape[1] for A in mats}
        if len(ranks) != 1:
            raise ValidationError(f"factor matrices disagree on rank: {sorted(ranks)}")
        if mats[0].shape[1] < 1:
            raise ValidationError("rank must be >= 1")
        object.__setattr__(self, "factors", mats)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    def check(self, shape: Shape) -> None:
        if len(self.factors) != shape.d - 1:
            raise ValidationError(
                f"expected {shape.d - 1} factor matrices for a {shape.d}-way tensor, got {len(self.factors)}"
            )
        for l, A in zip(shape.other_modes, self.factors):
            if A.shape[0] != shape.dims[l]:
                raise ValidationError(f"factor for mode {l} has {A.shape[0]} rows, expected {shape.dims[l]}")

    def by_mode(self, shape: Shape) -> dict[int, np.ndarray]:
        return dict(zip(shape.other_modes, self.factors))


def kr_row(factors: FactorSet, shape: Shape, col: int) -> np.ndarray:
    """Row ``col`` of the Khatri-Rao product Z, without forming Z.

    Hadamard product of the matching rows of the d-1 fixed factors; O(d r).
    """
    if not 0 <= col < shape.M:
        raise DomainError(f"col {col} out of range [0, {shape.M})")
    idx = multi_index_from_coords(shape, ModeKCoordinate(0, col))
    z = np.ones(factors.rank)
    for l, A in zip(shape.other_modes, factors.factors):
        z = z * A[idx[l]]
    return z


def _kr_rows(factors: FactorSet, shape: Shape, indices: np.ndarray) -> np.ndarray:
    Z = np.ones((len(indices), factors.rank))
    for l, A in zip(shape.other_modes, factors.factors):
        Z = Z * A[indices[:, l]]
    return Z


def accumulate_rows(rows: np.ndarray, X: np.ndarray, n: int) -> np.ndarray:
    """``out[i] = sum of X[m] over m with rows[m] == i``, summed in observation order."""
    out = np.empty((n, X.shape[1]))
    for c in range(X.shape[1]):
        out[:, c] = np.bincount(rows, weights=X[:, c], minlength=n)
    return out


@dataclass(frozen=True, eq=False)
class ObservationSet:
    shape: Shape
    indices: np.ndarray  # (q, d) multi-indices
    rows: np.ndarray  # (q,) mode-k index i_m
    cols: np.ndarray  # (q,) unfolding column j_m
    values: np.ndarray  # (q,) y_m
    Z: np.ndarray  # (q, r) cached Khatri-Rao rows
    slices: tuple[np.ndarray, ...] = field(repr=False)
    setup_flops: int = 0

    @property
    def q(self) -> int:
        return len(self.values)

    @property
    def n(self) -> int:
        return self.shape.n

    @property
    def rank(self) -> int:
        return self.Z.shape[1]

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(y)) for i, j, y in zip(self.rows, self.cols, self.values)]


def build_observation_set(shape: Shape, factors: FactorSet, raw: Sequence) -> ObservationSet:
    """Build an :class:`ObservationSet` from ``(multi_index, value)`` pairs."""
    if len(raw):
        indices = np.array([tuple(mi) for mi, _ in raw], dtype=np.int64)
        values = np.array([v for _, v in raw], dtype=np.float64)
    else:
        indices = np.zeros((0, shape.d), dtype=np.int64)
        values = np.zeros(0)
    return observations_from_arrays(shape, factors, indices, values)


def observations_from_arrays(shape: Shape, factors: FactorSet, indices, values) -> ObservationSet:
    """Array form of :func:`build_observation_set`."""
    factors.check(shape)
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, shape.d)
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if len(indices) != len(values):
        raise ValidationError(f"{len(indices)} indices but {len(values)} values")
    if not np.all(np.isfinite(values)):
        raise ValidationError("observation values must be finite")

    rows, cols = mode_k_coords_array(shape, indices)
    keys = rows + cols * shape.n
    _, first = np.unique(keys, return_index=True)
    if len(first) != len(keys):
        dup = np.setdiff1d(np.arange(len(keys)), first)[0]
        raise ValidationError(f"duplicate observation at multi-index {tuple(int(x) for x in indices[dup])} (entry {dup})")

    Z = _kr_rows(factors, shape, indices)
    slices = tuple(np.flatnonzero(rows == i) for i in range(shape.n))
    return ObservationSet(
        shape=shape,
        indices=indices,
        rows=rows,
        cols=cols,
        values=values,
        Z=Z,
        slices=slices,
        setup_flops=len(values) * (shape.d - 2) * factors.rank,
    )


def sparse_mttkrp(obs: ObservationSet, counter=None) -> np.ndarray:
    """B = T Z computed from the q observations only; O(q r)."""
    if counter is not None:
        counter.add(obs.q * obs.rank)
    return accumulate_rows(obs.rows, obs.values[:, None] * obs.Z, obs.n)
