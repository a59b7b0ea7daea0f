"""Mode-k RKHS kernel matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PSDViolationError, ValidationError

FAMILIES = ("rbf", "linear", "identity")


@dataclass(frozen=True)
class KernelSpec:
    family: str = "rbf"
    lengthscale: float = 0.3
    jitter: float = 1e-10

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "rbf" and not self.lengthscale > 0:
            raise ValidationError(f"rbf lengthscale must be positive, got {self.lengthscale}")
        if self.jitter < 0:
            raise ValidationError(f"jitter must be nonnegative, got {self.jitter}")


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    values: np.ndarray
    points: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]


def grid_points(n: int) -> np.ndarray:
    """Uniform grid ``i / (n - 1)`` on [0, 1] (a single point sits at 0)."""
    if n == 1:
        return np.zeros(1)
    return np.arange(n) / (n - 1)


def build_kernel(points, spec: KernelSpec) -> KernelMatrix:
    p = np.asarray(points, dtype=np.float64).reshape(-1)
    n = p.size
    if n < 1:
        raise ValidationError("kernel needs at least one point")
    if not np.all(np.isfinite(p)):
        raise ValidationError("kernel points must be finite")

    if spec.family == "identity":
        K = np.eye(n)
    else:
        K = np.empty((n, n))
        # one evaluation per unordered pair keeps K exactly symmetric
        iu, ju = np.triu_indices(n)
        if spec.family == "rbf":
            vals = np.exp(-((p[iu] - p[ju]) ** 2) / (2.0 * spec.lengthscale**2))
        else:
            vals = p[iu] * p[ju]
        K[iu, ju] = vals
        K[ju, iu] = vals
        K[np.diag_indices(n)] += spec.jitter
    return KernelMatrix(values=K, points=p)


def hadamard_square(K) -> np.ndarray:
    """Entrywise square ``K o K``."""
    V = K.values if isinstance(K, KernelMatrix) else np.asarray(K)
    return V * V


def assert_psd(K, tol: float = 0.0) -> float:
    """Check positive semi-definiteness with a symmetric elimination (unpivoted LDL^T).

    Runs a symmetric elimination on ``K + tol*I`` and returns the smallest
    pivot. A negative pivot raises :class:`PSDViolationError`. Zero pivots
    are allowed: the corresponding row must then be (numerically) zero and
    is skipped.
    """
    A = np.array(K.values if isinstance(K, KernelMatrix) else K, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValidationError(f"expected a square matrix, got {A.shape}")
    if not np.array_equal(A, A.T):
        raise ValidationError("matrix is not symmetric")
    A[np.diag_indices(n)] += tol
    scale = max(float(np.max(np.abs(np.diag(A)))), 1.0) if n else 1.0
    zero_tol = 64 * n * np.finfo(float).eps * scale
    smallest = np.inf
    for j in range(n):
        piv = A[j, j]
        smallest = min(smallest, piv)
        if piv < -zero_tol:
            raise PSDViolationError(f"negative pivot {piv:.3e} at index {j}", pivot=float(piv))
        if piv <= zero_tol:
            if np.any(np.abs(A[j, j + 1 :]) > np.sqrt(zero_tol * scale)):
                raise PSDViolationError(f"zero pivot at index {j} with nonzero off-diagonal", pivot=float(piv))
            continue
        l = A[j + 1 :, j] / piv
        A[j + 1 :, j + 1 :] -= np.outer(l, A[j, j + 1 :])
    return float(smallest)
