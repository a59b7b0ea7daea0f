"""Operation-count scaling sweeps and cost-model fits.

Sweeps regenerate an instance per value of the swept size, run every solver
configuration for a fixed number of iterations (no convergence exit) and
record the flop counters. Because counters are exact polynomials in
(n, r, q), a least-squares fit against the right monomials has zero
residual up to rounding; a wrong model leaves a visible residual.
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import FitError, ValidationError
from .problemgen import GenSpec, generate
from .solvers import SolveConfig, run_solver

SWEEP_VARIABLES = ("q", "n", "r")
CSV_HEADER = ("variable", "value", "config", "setup_flops", "iter_flops", "setup_s", "iter_s")

# per-iteration monomials for each configuration
COST_MODELS = {
    "jacobi-onfly": ("n^2 r", "q r", "n r"),
    "inverse-free": ("n^2 r", "q r", "n r"),
    "block-preagg": ("n^2 r", "n r^2", "n r"),
}


@dataclass(frozen=True)
class ScalingPoint:
    variable: str
    value: int
    config: str
    n: int
    r: int
    q: int
    d: int
    iterations: int
    setup_flops: int
    iter_flops: float  # per iteration
    setup_s: float
    iter_s: float  # per iteration


@dataclass
class ScalingReport:
    sweep_variable: str
    points: list

    def for_config(self, config: str) -> list:
        return [pt for pt in self.points if pt.config == config]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for pt in self.points:
            w.writerow(
                [
                    pt.variable,
                    pt.value,
                    pt.config,
                    pt.setup_flops,
                    _num(pt.iter_flops),
                    f"{pt.setup_s:.17g}",
                    f"{pt.iter_s:.17g}",
                ]
            )
        return buf.getvalue()


def _num(x) -> str:
    if float(x).is_integer():
        return str(int(x))
    return f"{float(x):.17g}"


def _spec_for(base: GenSpec, variable: str, value: int) -> GenSpec:
    if variable == "q":
        return replace(base, q=value)
    if variable == "r":
        return replace(base, rank=value)
    if variable == "n":
        dims = list(base.dims)
        dims[base.mode] = value
        return replace(base, dims=tuple(dims))
    raise ValidationError(f"unknown sweep variable {variable!r}; expected one of {SWEEP_VARIABLES}")


def sweep(
    base: GenSpec,
    variable: str,
    values: Iterable[int],
    configs: Sequence[str],
    iters: int = 10,
) -> ScalingReport:
    if variable not in SWEEP_VARIABLES:
        raise ValidationError(f"unknown sweep variable {variable!r}; expected one of {SWEEP_VARIABLES}")
    # refreshes would add a non-per-iteration term, so keep them out of the window
    cfg = SolveConfig(fixed_iters=iters, refresh_interval=max(iters + 1, 50))
    points = []
    for value in sorted(values):
        p, _ = generate(_spec_for(base, variable, value))
        for name in configs:
            rep = run_solver(p, name, cfg)
            k = max(rep.iterations, 1)
            per_iter = rep.iter_flops / k
            points.append(
                ScalingPoint(
                    variable=variable,
                    value=int(value),
                    config=name,
                    n=p.n,
                    r=p.r,
                    q=p.q,
                    d=p.shape.d,
                    iterations=rep.iterations,
                    setup_flops=rep.setup_flops,
                    iter_flops=int(per_iter) if float(per_iter).is_integer() else per_iter,
                    setup_s=rep.wall_time.get("setup", 0.0),
                    iter_s=rep.wall_time.get("solve", 0.0) / k,
                )
            )
    return ScalingReport(variable, points)


_FACTOR = re.compile(r"^([nrqd])(?:\^(\d+))?$")


def monomial(term: str, sizes: dict) -> float:
    """Evaluate a monomial like ``"n^2 r"`` (space- or ``*``-separated factors)."""
    val = 1.0
    for tok in term.replace("*", " ").split():
        m = _FACTOR.match(tok)
        if not m:
            raise ValidationError(f"bad monomial factor {tok!r} in {term!r}")
        val *= float(sizes[m.group(1)]) ** int(m.group(2) or 1)
    return val


@dataclass(frozen=True)
class CostFit:
    terms: tuple
    coefficients: tuple
    residual: float

    def as_dict(self) -> dict:
        return dict(zip(self.terms, self.coefficients))


def fit_cost_model(data, terms: Sequence[str], field: str = "iter_flops", config: str | None = None) -> CostFit:
    """Least-squares fit of a flop column to a sum of monomials.

    ``data`` is a :class:`ScalingReport`, a list of :class:`ScalingPoint`, or
    a list of ``(sizes_dict, value)`` pairs. Returns the coefficients and the
    relative residual ``||X c - y|| / ||y||``.
    """
    if isinstance(data, ScalingReport):
        data = data.points
    rows = []
    for item in data:
        if isinstance(item, ScalingPoint):
            if config is not None and item.config != config:
                continue
            sizes = {"n": item.n, "r": item.r, "q": item.q, "d": item.d}
            rows.append((sizes, float(getattr(item, field))))
        else:
            sizes, y = item
            rows.append((sizes, float(y)))
    terms = tuple(terms)
    if len(rows) < len(terms):
        raise FitError(f"{len(rows)} data points cannot determine {len(terms)} coefficients")
    X = np.array([[monomial(t, s) for t in terms] for s, _ in rows])
    y = np.array([v for _, v in rows])
    # column scaling keeps the rank test meaningful when monomials differ by orders of magnitude
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale
    if np.linalg.matrix_rank(Xs) < len(terms):
        raise FitError(f"design matrix for terms {terms} is rank deficient on these points")
    c, *_ = np.linalg.lstsq(Xs, y, rcond=None)
    c = c / scale
    ynorm = np.linalg.norm(y)
    resid = float(np.linalg.norm(X @ c - y) / ynorm) if ynorm > 0 else float(np.linalg.norm(X @ c - y))
    return CostFit(terms, tuple(float(v) for v in c), resid)
