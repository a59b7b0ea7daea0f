"""Shared fixtures and fully materialized reference constructions.

The reference helpers build T, Z, S and Z kron K explicitly with plain
numpy, using their own index arithmetic, so they share no code path with
the package beyond the input data.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from rkhs_cp.kernel import KernelMatrix, KernelSpec
from rkhs_cp.observations import FactorSet, build_observation_set
from rkhs_cp.operators import make_problem
from rkhs_cp.problemgen import GenSpec, generate
from rkhs_cp.tensor_index import Shape

DEFAULT_KERNEL = KernelSpec("rbf", 0.3, 1e-10)


def rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else float(np.linalg.norm(a - b))


# ---------------------------------------------------------------- reference builds


def ref_unfold_col(dims, mode, multi_index) -> int:
    """Unfolding column by explicit stride accumulation."""
    col, stride = 0, 1
    for l, n_l in enumerate(dims):
        if l == mode:
            continue
        col += multi_index[l] * stride
        stride *= n_l
    return col


def ref_khatri_rao(dims, mode, factors) -> np.ndarray:
    """Z with row j = Hadamard product of factor rows for the cell decoded from j."""
    others = [l for l in range(len(dims)) if l != mode]
    M = int(np.prod([dims[l] for l in others]))
    r = factors[0].shape[1]
    Z = np.ones((M, r))
    for j in range(M):
        sub = np.unravel_index(j, [dims[l] for l in others], order="F")
        for pos, A in zip(sub, factors):
            Z[j] *= A[pos]
    return Z


def ref_unfolding(dims, mode, indices, values) -> np.ndarray:
    """Zero-filled mode-k unfolding T (n x M)."""
    n = dims[mode]
    M = int(np.prod(dims)) // n
    T = np.zeros((n, M))
    for idx, y in zip(indices, values):
        T[idx[mode], ref_unfold_col(dims, mode, idx)] = y
    return T


def ref_selection(n, M, indices, dims, mode) -> np.ndarray:
    """S as an explicit (nM x q) matrix of identity columns."""
    S = np.zeros((n * M, len(indices)))
    for m, idx in enumerate(indices):
        S[idx[mode] + ref_unfold_col(dims, mode, idx) * n, m] = 1.0
    return S


def ref_system(p):
    """Return (H, C) from the textbook formula with everything materialized."""
    dims, mode = p.shape.dims, p.shape.mode
    n, r = p.n, p.r
    Z = ref_khatri_rao(dims, mode, p.factors.factors)
    T = ref_unfolding(dims, mode, p.obs.indices, p.obs.values)
    S = ref_selection(n, Z.shape[0], p.obs.indices, dims, mode)
    ZK = np.kron(Z, p.Kv)
    SS = S @ S.T
    H = ZK.T @ SS @ ZK + p.lam * np.kron(np.eye(r), p.Kv)
    c = ZK.T @ SS @ T.reshape(-1, order="F")
    return H, c.reshape(n, r, order="F")


# ---------------------------------------------------------------- frozen exact instance

# shape (2,3,2), mode 0, r 2, K = [[2,1],[1,2]], lambda 1. Every quantity below
# was computed in exact rational arithmetic and is frozen here.
SMALL_FACTORS = (
    np.array([[1.0, 3.0], [0.0, 1.0], [2.0, -1.0]]),
    np.array([[1.0, 2.0], [3.0, -1.0]]),
)
SMALL_K = np.array([[2.0, 1.0], [1.0, 2.0]])
SMALL_RAW = [((0, 0, 0), 1.0), ((1, 2, 1), 2.0), ((0, 1, 1), -1.0), ((1, 0, 1), 3.0), ((0, 2, 1), 0.5)]
SMALL_Z = np.array([[1, 6], [6, 1], [0, -1], [3, -3], [6, 1]], dtype=float)
SMALL_B = np.array([[4.0, 7.5], [21.0, -7.0]])
SMALL_H = np.array(
    [
        [195, 165, 45, 18],
        [165, 219, 18, 0],
        [45, 18, 164, 97],
        [18, 0, 97, 80],
    ],
    dtype=float,
)
SMALL_C = np.array([[29.0, 8.0], [46.0, -6.5]])
SMALL_W_EXACT = [
    Fraction(-1186363, 11290776),
    Fraction(998163, 3763592),
    Fraction(549375, 1881796),
    Fraction(-1549049, 3763592),
]
SMALL_W = np.array([float(x) for x in SMALL_W_EXACT]).reshape(2, 2, order="F")


@pytest.fixture
def small_problem():
    shape = Shape((2, 3, 2), 0)
    factors = FactorSet(SMALL_FACTORS)
    obs = build_observation_set(shape, factors, SMALL_RAW)
    K = KernelMatrix(SMALL_K.copy(), np.zeros(2))
    return make_problem(obs, factors, K, 1.0)


def gen_problem(dims=(8, 6, 5), rank=3, q=60, lam=0.1, seed=0, mode=0, kernel=DEFAULT_KERNEL, noise=0.0):
    return generate(GenSpec(dims, mode, rank, q, kernel, lam, noise, seed))


@pytest.fixture
def desk_problem():
    return gen_problem()[0]


# ---------------------------------------------------------------- acceptance reporting

_CRITERIA_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion and return the verdict."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _CRITERIA_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA_LINES:
            terminalreporter.write_line(line)
