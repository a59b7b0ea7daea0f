"""Jacobi and row-wise block-Jacobi preconditioners.

The kernel preconditioner ``I_r kron K`` used by the inverse-free solver has
no separate object: it is never inverted, only tracked inside
:func:`rkhs_cp.solvers.pcg_inverse_free`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionerSingularError, ValidationError
from .kernel import hadamard_square
from .observations import accumulate_rows
from .operators import ProblemInstance, SliceGrams, _charge


@dataclass(frozen=True, eq=False)
class JacobiDiag:
    D: np.ndarray  # (n, r), reshaped diagonal of H


@dataclass(frozen=True, eq=False)
class BlockJacobi:
    blocks: np.ndarray  # (n, r, r) lower-triangular Cholesky factors
    M: np.ndarray  # (n, r, r) the assembled diagonal blocks


def build_jacobi_diag(p: ProblemInstance, counter=None) -> JacobiDiag:
    """Exact diagonal of H as an n x r matrix.

    ``D = (K o K) (Omega Zsq) + lam diag(K) 1^T`` where row i of
    ``Omega Zsq`` sums the squared cached rows of slice i.
    """
    obs = p.obs
    n, r, q = p.n, p.r, p.q
    mask_sq = accumulate_rows(obs.rows, obs.Z * obs.Z, n)
    Ksq = hadamard_square(p.K)
    D = Ksq @ mask_sq + p.lam * np.diag(p.Kv)[:, None]
    _charge(counter, q * r + n * n + n * n * r + n * r)
    bad = np.argwhere(~(D > 0))
    if bad.size:
        i, c = bad[0]
        raise PreconditionerSingularError(
            f"Jacobi diagonal entry ({i}, {c}) = {D[i, c]:.3e} is not positive", slice_index=int(i)
        )
    return JacobiDiag(D)


def apply_jacobi(Dg: JacobiDiag, R, counter=None) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != Dg.D.shape:
        raise ValidationError(f"expected {Dg.D.shape}, got {R.shape}")
    _charge(counter, R.size)
    return R / Dg.D


def assemble_blocks(p: ProblemInstance, E: SliceGrams, counter=None) -> np.ndarray:
    """``M_i = sum_l K[i,l]^2 E_l + lam K[i,i] I`` as one (n x n)(n x r^2) product."""
    n, r = p.n, p.r
    Ksq = hadamard_square(p.K)
    M = (Ksq @ E.grams.reshape(n, r * r)).reshape(n, r, r)
    M[:, np.arange(r), np.arange(r)] += p.lam * np.diag(p.Kv)[:, None]
    _charge(counter, n * n + n * n * r * r + n * r)
    return M


def _cholesky_flops(r: int) -> int:
    return r * (r + 1) * (r + 2) // 6


def build_block_jacobi(p: ProblemInstance, E: SliceGrams, counter=None) -> BlockJacobi:
    """Assemble and Cholesky-factor the n diagonal r x r blocks of H."""
    M = assemble_blocks(p, E, counter)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        L = None
    if L is None or not np.all(np.diagonal(L, axis1=1, axis2=2) > 0):
        for i in range(p.n):
            try:
                Li = np.linalg.cholesky(M[i])
            except np.linalg.LinAlgError:
                Li = None
            if Li is None or not np.all(np.diag(Li) > 0):
                raise PreconditionerSingularError(f"block {i} is not positive definite", slice_index=i)
    _charge(counter, p.n * _cholesky_flops(p.r))
    return BlockJacobi(blocks=L, M=M)


def apply_block_jacobi(Bj: BlockJacobi, R, counter=None) -> np.ndarray:
    """Solve ``L_i L_i^T x_i = R[i]`` for every row i.

    Substitution runs over the r columns and is vectorized across rows.
    """
    R = np.asarray(R, dtype=np.float64)
    L = Bj.blocks
    n, r = R.shape
    if L.shape != (n, r, r):
        raise ValidationError(f"blocks are {L.shape}, residual is {R.shape}")
    y = np.empty_like(R)
    for j in range(r):
        y[:, j] = (R[:, j] - np.einsum("ik,ik->i", L[:, j, :j], y[:, :j])) / L[:, j, j]
    x = np.empty_like(R)
    for j in reversed(range(r)):
        x[:, j] = (y[:, j] - np.einsum("ik,ik->i", L[:, j + 1 :, j], x[:, j + 1 :])) / L[:, j, j]
    _charge(counter, n * r * (r + 1))
    return x
