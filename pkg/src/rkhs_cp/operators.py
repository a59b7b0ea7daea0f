"""Realizations of the mode-k system operator.

    H = (Z kron K)^T S S^T (Z kron K) + lam (I_r kron K)

Every matrix-vector product here acts on n x r matrices ``V`` standing in
for ``vec(V)`` under column-major stacking. Four realizations are provided:

* :func:`build_dense_hessian` / :func:`mvp_dense`: explicit nr x nr oracle.
* :func:`mvp_onfly`: per-observation residual evaluation, O(qr + n^2 r).
* :func:`mvp_preaggregated`: per-slice r x r Gram matrices, O(n^2 r + n r^2).
* :func:`mvp_reduced`: the data-only operator with the kernel factored out,
  O(qr), used by the inverse-free solver.

All of them accept an optional :class:`FlopCounter`. Counts are fused
multiply-add pairs, charged to whatever phase the counter is in.
"""
from __future__ import annotations

from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import OracleScaleError, ValidationError
from .kernel import KernelMatrix
from .observations import FactorSet, ObservationSet, accumulate_rows, sparse_mttkrp
from .tensor_index import Shape, unvec, vec

DEFAULT_ORACLE_CAP = 400


class FlopCounter:
    """Multiply-add counter with per-phase attribution.

    >>> c = FlopCounter()
    >>> with c.phase("mvp"):
    ...     c.add(10)
    >>> c.phases["mvp"]
    10
    """

    def __init__(self, phase: str = "setup"):
        self.phases: dict[str, int] = defaultdict(int)
        self.current = phase

    @contextmanager
    def phase(self, name: str):
        prev, self.current = self.current, name
        try:
            yield self
        finally:
            self.current = prev

    def add(self, count: int) -> None:
        if count < 0:
            raise ValueError("flop counts are nonnegative")
        self.phases[self.current] += int(count)

    @property
    def total(self) -> int:
        return sum(self.phases.values())

    def snapshot(self) -> dict[str, int]:
        return dict(self.phases)


def _charge(counter, count):
    if counter is not None:
        counter.add(count)


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    shape: Shape
    obs: ObservationSet
    factors: FactorSet
    K: KernelMatrix
    lam: float
    B: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.shape.n

    @property
    def r(self) -> int:
        return self.factors.rank

    @property
    def q(self) -> int:
        return self.obs.q

    @property
    def Kv(self) -> np.ndarray:
        return self.K.values


def make_problem(obs: ObservationSet, factors: FactorSet, K: KernelMatrix, lam: float, meta=None) -> ProblemInstance:
    """Bind observations, factors and kernel into a problem; computes B = T Z sparsely."""
    shape = obs.shape
    if K.values.shape != (shape.n, shape.n):
        raise ValidationError(f"kernel is {K.values.shape}, expected ({shape.n}, {shape.n})")
    if obs.rank != factors.rank:
        raise ValidationError(f"observation rows have rank {obs.rank}, factors have {factors.rank}")
    if not lam >= 0:
        raise ValidationError(f"lambda must be nonnegative, got {lam}")
    return ProblemInstance(shape, obs, factors, K, float(lam), sparse_mttkrp(obs), dict(meta or {}))


def _check_V(p: ProblemInstance, V):
    V = np.asarray(V, dtype=np.float64)
    if V.shape != (p.n, p.r):
        raise ValidationError(f"expected an ({p.n}, {p.r}) matrix, got {V.shape}")
    return V


def observation_gradients(p: ProblemInstance) -> np.ndarray:
    """Rows ``g_m = z_m kron K[i_m, :]`` of ``S^T (Z kron K)``, shape (q, nr)."""
    Kv = p.Kv
    return (p.obs.Z[:, :, None] * Kv[p.obs.rows][:, None, :]).reshape(p.q, p.r * p.n)


def build_dense_hessian(p: ProblemInstance, cap: int = DEFAULT_ORACLE_CAP) -> np.ndarray:
    """Assemble the nr x nr system matrix from observation outer products.

    Z and Z kron K are never materialized, so this stays usable whenever
    n*r is small regardless of M.
    """
    size = p.n * p.r
    if size > cap:
        raise OracleScaleError(f"dense oracle needs n*r <= {cap}, got {size}")
    G = observation_gradients(p)
    H = G.T @ G + p.lam * np.kron(np.eye(p.r), p.Kv)
    # G^T G is symmetric up to BLAS rounding; make it exact
    return 0.5 * (H + H.T)


def mvp_dense(H: np.ndarray, V: np.ndarray, counter=None) -> np.ndarray:
    V = np.asarray(V, dtype=np.float64)
    if H.shape != (V.size, V.size):
        raise ValidationError(f"H is {H.shape} but V has {V.size} entries")
    _charge(counter, V.size * V.size)
    return unvec(H @ vec(V), V.shape[0])


def mvp_onfly(p: ProblemInstance, V, counter=None) -> np.ndarray:
    """Apply H using the cached Khatri-Rao rows at every call.

    U = K V; e_m = <U[i_m], z_m>; P[i] = sum_{m in slice i} e_m z_m;
    result = K P + lam U.
    """
    V = _check_V(p, V)
    Kv, obs = p.Kv, p.obs
    n, r, q = p.n, p.r, p.q
    U = Kv @ V
    e = np.einsum("mr,mr->m", U[obs.rows], obs.Z)
    P = accumulate_rows(obs.rows, e[:, None] * obs.Z, n)
    _charge(counter, 2 * n * n * r + 2 * q * r + n * r)
    return Kv @ P + p.lam * U


@dataclass(frozen=True, eq=False)
class SliceGrams:
    grams: np.ndarray  # (n, r, r)

    @property
    def n(self) -> int:
        return self.grams.shape[0]


def build_slice_grams(obs: ObservationSet, counter=None) -> SliceGrams:
    """Per-slice Gram matrices ``E_i = sum_{m in slice i} z_m z_m^T``; O(q r^2)."""
    q, r = obs.q, obs.rank
    outer = (obs.Z[:, :, None] * obs.Z[:, None, :]).reshape(q, r * r)
    _charge(counter, q * r * r)
    return SliceGrams(accumulate_rows(obs.rows, outer, obs.n).reshape(obs.n, r, r))


def mvp_preaggregated(p: ProblemInstance, E: SliceGrams, V, counter=None) -> np.ndarray:
    """Apply H through the slice Grams: U = K V, Y[i] = U[i] E_i, result K Y + lam U.

    Cost does not depend on q.
    """
    V = _check_V(p, V)
    if E.grams.shape != (p.n, p.r, p.r):
        raise ValidationError(f"slice grams are {E.grams.shape}, expected ({p.n}, {p.r}, {p.r})")
    n, r = p.n, p.r
    U = p.Kv @ V
    Y = np.einsum("ia,iab->ib", U, E.grams)
    _charge(counter, 2 * n * n * r + n * r * r + n * r)
    return p.Kv @ Y + p.lam * U


def mvp_reduced(p: ProblemInstance, V, counter=None) -> np.ndarray:
    """Data-only operator ``(Z kron I)^T S S^T (Z kron I)``; no kernel products."""
    V = _check_V(p, V)
    obs = p.obs
    e = np.einsum("mr,mr->m", V[obs.rows], obs.Z)
    _charge(counter, 2 * p.q * p.r)
    return accumulate_rows(obs.rows, e[:, None] * obs.Z, p.n)


def build_rhs(p: ProblemInstance, counter=None) -> np.ndarray:
    """Right-hand side ``C = K B``."""
    _charge(counter, p.n * p.n * p.r)
    return p.Kv @ p.B


def dense_reduced_operator(p: ProblemInstance, cap: int = DEFAULT_ORACLE_CAP) -> np.ndarray:
    """Materialize the reduced operator by applying :func:`mvp_reduced` to basis matrices."""
    size = p.n * p.r
    if size > cap:
        raise OracleScaleError(f"dense oracle needs n*r <= {cap}, got {size}")
    H = np.empty((size, size))
    for col in range(size):
        e = np.zeros(size)
        e[col] = 1.0
        H[:, col] = vec(mvp_reduced(p, unvec(e, p.n)))
    return 0.5 * (H + H.T)
