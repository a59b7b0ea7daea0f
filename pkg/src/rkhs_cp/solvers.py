"""PCG drivers and the dense direct oracle for the mode-k system.

Three iterative configurations are exposed by name through :func:`run_solver`:

``jacobi-onfly``
    on-the-fly sparse MVP with the exact diagonal preconditioner.
``block-preagg``
    slice-Gram MVP with the row-wise block-Jacobi preconditioner.
``inverse-free``
    kernel-preconditioned PCG that tracks ``K Z_k`` and ``K D_k`` instead of
    ever applying ``K^{-1}``.

``dense`` is the Cholesky solve of the assembled system.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import BreakdownError, SingularSystemError, SolverSuiteError, ValidationError
from .operators import (
    DEFAULT_ORACLE_CAP,
    FlopCounter,
    ProblemInstance,
    build_dense_hessian,
    build_rhs,
    build_slice_grams,
    dense_reduced_operator,
    mvp_dense,
    mvp_onfly,
    mvp_preaggregated,
    mvp_reduced,
)
from .preconditioners import apply_block_jacobi, apply_jacobi, build_block_jacobi, build_jacobi_diag
from .tensor_index import unvec, vec

MVP_CHOICES = ("onfly", "preaggregated", "dense")
PRECOND_CHOICES = ("jacobi", "block", "identity")
SOLVERS = {
    "dense": None,
    "jacobi-onfly": ("onfly", "jacobi"),
    "block-preagg": ("preaggregated", "block"),
    "inverse-free": None,
}
ITER_PHASES = ("mvp", "precond", "vector")
_TINY = np.finfo(float).tiny


@dataclass
class SolveConfig:
    tol: float = 1e-10
    max_iters: Optional[int] = None  # None -> 10 * n * r
    refresh_interval: int = 50
    breakdown_eps: float = 1e-14
    fixed_iters: Optional[int] = None  # run exactly this many iterations, no convergence exit

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValidationError(f"tol must lie in (0, 1), got {self.tol}")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValidationError(f"max_iters must be positive, got {self.max_iters}")
        if self.refresh_interval < 1:
            raise ValidationError(f"refresh_interval must be >= 1, got {self.refresh_interval}")
        if not self.breakdown_eps > 0:
            raise ValidationError("breakdown_eps must be positive")
        if self.fixed_iters is not None and self.fixed_iters < 0:
            raise ValidationError("fixed_iters must be nonnegative")

    def iteration_limit(self, p: ProblemInstance) -> int:
        if self.fixed_iters is not None:
            return self.fixed_iters
        return self.max_iters if self.max_iters is not None else 10 * p.n * p.r


@dataclass
class SolveReport:
    solver: str
    W: np.ndarray
    iterations: int
    residual_history: list
    converged: bool
    flops: dict = field(default_factory=dict)
    wall_time: dict = field(default_factory=dict)
    refresh_log: list = field(default_factory=list)

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1]

    @property
    def setup_flops(self) -> int:
        return self.flops.get("setup", 0)

    @property
    def iter_flops(self) -> int:
        """Multiply-adds spent inside the iteration loop, refreshes excluded."""
        return sum(self.flops.get(ph, 0) for ph in ITER_PHASES)


def _fro(X) -> float:
    return float(np.linalg.norm(X))


def _tr(X, Y) -> float:
    """``Tr(X^T Y)`` for equally shaped matrices."""
    return float(np.vdot(X, Y))


def _require_lambda(p: ProblemInstance):
    if not p.lam > 0:
        raise ValidationError(f"solvers require lambda > 0 (got {p.lam}); the system may be singular")


def solve_dense(p: ProblemInstance, cap: int = DEFAULT_ORACLE_CAP) -> SolveReport:
    """Direct Cholesky solve of the assembled nr x nr system."""
    _require_lambda(p)
    counter = FlopCounter("setup")
    t0 = time.perf_counter()
    H = build_dense_hessian(p, cap)
    C = build_rhs(p, counter)
    nr = p.n * p.r
    counter.add(p.q * nr * nr + nr * nr)
    t1 = time.perf_counter()
    try:
        with counter.phase("factor"):
            factor = scipy.linalg.cho_factor(H, lower=True)
            counter.add(nr**3 // 3 + 2 * nr * nr)
        w = scipy.linalg.cho_solve(factor, vec(C))
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularSystemError(f"Cholesky factorization of the {nr}x{nr} system failed: {exc}") from exc
    W = unvec(w, p.n)
    normC = _fro(C)
    res = _fro(H @ w - vec(C)) / normC if normC > 0 else 0.0
    t2 = time.perf_counter()
    return SolveReport(
        solver="dense",
        W=W,
        iterations=1,
        residual_history=[res],
        converged=True,
        flops=counter.snapshot(),
        wall_time={"setup": t1 - t0, "solve": t2 - t1},
    )


def _grams(p: ProblemInstance, counter, cache: dict):
    if "E" not in cache:
        cache["E"] = build_slice_grams(p.obs, counter)
    return cache["E"]


def _make_operator(p: ProblemInstance, mvp, counter, cap, cache):
    if callable(mvp):
        return mvp
    if mvp == "onfly":
        return lambda V: mvp_onfly(p, V, counter)
    if mvp == "preaggregated":
        E = _grams(p, counter, cache)
        return lambda V: mvp_preaggregated(p, E, V, counter)
    if mvp == "dense":
        H = build_dense_hessian(p, cap)
        counter.add(p.q * (p.n * p.r) ** 2)
        return lambda V: mvp_dense(H, V, counter)
    raise ValidationError(f"unknown mvp {mvp!r}; expected one of {MVP_CHOICES}")


def _make_preconditioner(p: ProblemInstance, precond, counter, cache):
    if callable(precond):
        return precond
    if precond == "jacobi":
        Dg = build_jacobi_diag(p, counter)
        return lambda R: apply_jacobi(Dg, R, counter)
    if precond == "block":
        Bj = build_block_jacobi(p, _grams(p, counter, cache), counter)
        return lambda R: apply_block_jacobi(Bj, R, counter)
    if precond == "identity":
        return lambda R: R.copy()
    raise ValidationError(f"unknown preconditioner {precond!r}; expected one of {PRECOND_CHOICES}")


def pcg_standard(
    p: ProblemInstance,
    mvp="onfly",
    precond="jacobi",
    cfg: Optional[SolveConfig] = None,
    callback: Optional[Callable[[int, np.ndarray], None]] = None,
    cap: int = DEFAULT_ORACLE_CAP,
    name: Optional[str] = None,
) -> SolveReport:
    """Preconditioned CG on n x r matrices with Frobenius inner products.

    ``mvp`` and ``precond`` are names from :data:`MVP_CHOICES` /
    :data:`PRECOND_CHOICES` or callables mapping an n x r matrix to one.
    ``callback(k, W_k)`` is invoked after every iteration.
    """
    _require_lambda(p)
    cfg = cfg or SolveConfig()
    counter = FlopCounter("setup")
    t0 = time.perf_counter()
    counter.add(p.q * p.r)  # B = T Z, formed with the problem
    C = build_rhs(p, counter)
    cache: dict = {}
    A = _make_operator(p, mvp, counter, cap, cache)
    Minv = _make_preconditioner(p, precond, counter, cache)
    t1 = time.perf_counter()

    n, r = p.n, p.r
    nr = n * r
    W = np.zeros((n, r))
    normC = _fro(C)
    label = name or f"pcg[{getattr(mvp, '__name__', mvp)}+{getattr(precond, '__name__', precond)}]"
    if normC == 0.0:
        return SolveReport(label, W, 0, [0.0], True, counter.snapshot(), {"setup": t1 - t0, "solve": 0.0})

    R = C.copy()
    Zk = Minv(R)
    rz = _tr(R, Zk)
    counter.add(nr)
    P = Zk.copy()
    history = [1.0]
    limit = cfg.iteration_limit(p)
    forced = cfg.fixed_iters is not None
    k = 0
    while k < limit:
        if not forced and history[-1] <= cfg.tol:
            break
        if abs(rz) < _TINY:
            # residual has underflowed: nothing left to reduce
            break
        with counter.phase("mvp"):
            V = A(P)
        with counter.phase("vector"):
            pv = _tr(P, V)
            pp = _tr(P, P)
            counter.add(2 * nr)
            if pp < _TINY:
                break
            if abs(pv) < cfg.breakdown_eps * pp:
                raise BreakdownError(f"PCG breakdown at iteration {k}: <p, Hp> = {pv:.3e}, ||p||^2 = {pp:.3e}", k)
            alpha = rz / pv
            W += alpha * P
            R -= alpha * V
            counter.add(2 * nr)
        with counter.phase("precond"):
            Zk = Minv(R)
        with counter.phase("vector"):
            rz_new = _tr(R, Zk)
            beta = rz_new / rz
            P = Zk + beta * P
            rz = rz_new
            history.append(_fro(R) / normC)
            counter.add(3 * nr)
        k += 1
        if callback is not None:
            callback(k, W)
    t2 = time.perf_counter()
    return SolveReport(
        solver=label,
        W=W,
        iterations=k,
        residual_history=history,
        converged=history[-1] <= cfg.tol,
        flops=counter.snapshot(),
        wall_time={"setup": t1 - t0, "solve": t2 - t1},
    )


def pcg_inverse_free(
    p: ProblemInstance,
    cfg: Optional[SolveConfig] = None,
    callback: Optional[Callable[[int, np.ndarray], None]] = None,
) -> SolveReport:
    """PCG preconditioned by ``I_r kron K`` without ever inverting K.

    Solves the same system in the factored form
    ``(P H_red P + lam P) vec(W) = P vec(B)`` with ``P = I_r kron K``. Since
    every residual lies in the range of P, the tracked state is the
    preconditioned residual ``Z_k`` itself together with ``Zt_k = K Z_k``
    (the true residual) and ``V_k = K D_k``. One dense kernel product per
    iteration; every ``cfg.refresh_interval`` iterations ``Zt`` and ``V`` are
    recomputed from scratch. Each refresh appends
    ``(iteration, drift_V, drift_Zt, drift_V_after)`` to ``refresh_log``,
    relative Frobenius gaps measured just before and just after the reset.

    The convergence metric is ``||Zt_k||_F / ||C||_F``.
    """
    _require_lambda(p)
    cfg = cfg or SolveConfig()
    counter = FlopCounter("setup")
    t0 = time.perf_counter()
    counter.add(p.q * p.r)  # B = T Z
    Kv, lam = p.Kv, p.lam
    n, r = p.n, p.r
    nr = n * r
    B = p.B
    Zt = build_rhs(p, counter)  # K B, also the system's C
    t1 = time.perf_counter()

    W = np.zeros((n, r))
    normC = _fro(Zt)
    if normC == 0.0:
        return SolveReport("inverse-free", W, 0, [0.0], True, counter.snapshot(), {"setup": t1 - t0, "solve": 0.0})

    Zr = B.copy()
    D = B.copy()
    V = Zt.copy()
    rz = _tr(Zr, Zt)
    counter.add(nr)
    history = [1.0]
    refresh_log = []
    limit = cfg.iteration_limit(p)
    forced = cfg.fixed_iters is not None
    k = 0
    while k < limit:
        if not forced and history[-1] <= cfg.tol:
            break
        if abs(rz) < _TINY:
            # residual has underflowed: nothing left to reduce
            break
        with counter.phase("mvp"):
            U = mvp_reduced(p, V, counter)
        with counter.phase("vector"):
            Q = U + lam * D
            vq = _tr(V, Q)
            dd = _tr(D, D)
            counter.add(3 * nr)
            if dd < _TINY:
                break
            if abs(vq) < cfg.breakdown_eps * dd:
                raise BreakdownError(f"PCG breakdown at iteration {k}: <d, Hd> = {vq:.3e}, ||d||^2 = {dd:.3e}", k)
            alpha = rz / vq
            W += alpha * D
            Zr -= alpha * Q
            counter.add(2 * nr)
        with counter.phase("mvp"):
            Mk = Kv @ U
            counter.add(n * n * r)
        with counter.phase("vector"):
            Zt -= alpha * (Mk + lam * V)
            rz_new = _tr(Zr, Zt)
            beta = rz_new / rz
            D = Zr + beta * D
            V = Zt + beta * V
            rz = rz_new
            counter.add(6 * nr)
        k += 1
        if k % cfg.refresh_interval == 0:
            with counter.phase("refresh"):
                KZ = Kv @ Zr
                KD = Kv @ D
                counter.add(2 * n * n * r)
                drift_v = _fro(V - KD) / max(_fro(KD), _TINY)
                drift_z = _fro(Zt - KZ) / max(_fro(KZ), _TINY)
                Zt, V = KZ, KD
                rz = _tr(Zr, Zt)
                counter.add(nr)
            KD_check = Kv @ D
            after = _fro(V - KD_check) / max(_fro(KD_check), _TINY)
            refresh_log.append((k, drift_v, drift_z, after))
        with counter.phase("vector"):
            history.append(_fro(Zt) / normC)
            counter.add(nr)
        if callback is not None:
            callback(k, W)
    t2 = time.perf_counter()
    return SolveReport(
        solver="inverse-free",
        W=W,
        iterations=k,
        residual_history=history,
        converged=history[-1] <= cfg.tol,
        flops=counter.snapshot(),
        wall_time={"setup": t1 - t0, "solve": t2 - t1},
        refresh_log=refresh_log,
    )


def run_solver(
    p: ProblemInstance,
    name: str,
    cfg: Optional[SolveConfig] = None,
    mvp: Optional[str] = None,
    precond: Optional[str] = None,
) -> SolveReport:
    """Dispatch on a solver name; ``mvp``/``precond`` override the pairing of the PCG configurations."""
    if name not in SOLVERS:
        raise ValidationError(f"unknown solver {name!r}; valid names: {', '.join(SOLVERS)}")
    if name == "dense":
        return solve_dense(p)
    if name == "inverse-free":
        return pcg_inverse_free(p, cfg)
    default_mvp, default_pre = SOLVERS[name]
    return pcg_standard(p, mvp or default_mvp, precond or default_pre, cfg, name=name)


class SpectralError(SolverSuiteError, ArithmeticError):
    pass


def condition_bound_check(p: ProblemInstance, cap: int = DEFAULT_ORACLE_CAP) -> tuple[float, float]:
    """Condition number of the kernel-preconditioned operator and its a-priori bound.

    The preconditioned operator is ``P^{1/2} H_red P^{1/2} + lam I`` with
    ``P = I_r kron K``; the bound is ``1 + lmax(H_red) lmax(K) / lam``.
    Returns ``(kappa_actual, kappa_bound)``.
    """
    _require_lambda(p)
    try:
        Hred = dense_reduced_operator(p, cap)
        kw, kv = np.linalg.eigh(p.Kv)
        Khalf = (kv * np.sqrt(np.clip(kw, 0.0, None))) @ kv.T
        Phalf = np.kron(np.eye(p.r), Khalf)
        A = Phalf @ Hred @ Phalf
        A = 0.5 * (A + A.T) + p.lam * np.eye(A.shape[0])
        ev = np.linalg.eigvalsh(A)
        hred_max = max(float(np.linalg.eigvalsh(Hred)[-1]), 0.0)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"eigen-decomposition failed: {exc}") from exc
    kappa = float(ev[-1] / ev[0])
    bound = 1.0 + hred_max * float(kw[-1]) / p.lam
    return kappa, bound
