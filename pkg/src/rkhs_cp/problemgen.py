"""Seeded synthetic instances and their on-disk layout.

Random streams come from numpy's Philox counter-based generator keyed by
``GenSpec.seed``; draws happen in a fixed order (factors by ascending mode,
ground-truth weights, observed cells, noise), so an instance is a pure
function of its spec. Streams are not promised to match other
implementations.

Instance directory layout::

    manifest.txt        key=value lines
    observations.csv    observed entries
    factor_<l>.csv      one per mode l != k
    kernel.csv          K
    ground_truth.csv    W*
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import formats
from .errors import ValidationError
from .kernel import KernelSpec, build_kernel, grid_points, KernelMatrix
from .observations import FactorSet, build_observation_set, observations_from_arrays
from .operators import ProblemInstance, make_problem
from .tensor_index import Shape

DENSE_SAMPLING_FRACTION = 0.01


@dataclass(frozen=True)
class GenSpec:
    dims: tuple[int, ...]
    mode: int = 0
    rank: int = 3
    q: Optional[int] = None  # None -> min(10 n r, N)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    lam: float = 0.1
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(x) for x in self.dims))
        shape = self.shape  # validates dims and mode
        if self.rank < 1:
            raise ValidationError(f"rank must be >= 1, got {self.rank}")
        q = self.resolved_q
        if q < 0:
            raise ValidationError(f"q must be >= 0, got {q}")
        if q > shape.N:
            raise ValidationError(f"q={q} exceeds the number of tensor cells N={shape.N}")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be nonnegative")
        if self.lam < 0:
            raise ValidationError("lambda must be nonnegative")

    @property
    def shape(self) -> Shape:
        return Shape(self.dims, self.mode)

    @property
    def resolved_q(self) -> int:
        if self.q is not None:
            return int(self.q)
        s = self.shape
        return min(10 * s.n * self.rank, s.N)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def sample_cells(rng: np.random.Generator, N: int, q: int) -> np.ndarray:
    """q distinct cell indices in [0, N), uniformly without replacement."""
    if q > N:
        raise ValidationError(f"cannot sample q={q} distinct cells from N={N}")
    if N and q / N > DENSE_SAMPLING_FRACTION:
        # numpy's permutation is a Fisher-Yates shuffle
        return rng.permutation(N)[:q]
    seen: set[int] = set()
    out = []
    while len(out) < q:
        c = int(rng.integers(N))
        if c not in seen:
            seen.add(c)
            out.append(c)
    return np.array(out, dtype=np.int64)


def generate(spec: GenSpec) -> tuple[ProblemInstance, np.ndarray]:
    """Draw an instance and its ground-truth weights ``W*``.

    Observations follow ``y_m = <(K W*)[i_m], z_m> + noise_sigma * xi_m``.
    """
    shape = spec.shape
    rng = make_rng(spec.seed)
    r = spec.rank
    factors = FactorSet(tuple(rng.uniform(-1.0, 1.0, size=(shape.dims[l], r)) for l in shape.other_modes))
    K = build_kernel(grid_points(shape.n), spec.kernel)
    W_true = rng.standard_normal((shape.n, r))

    q = spec.resolved_q
    cells = sample_cells(rng, shape.N, q)
    indices = np.stack(np.unravel_index(cells, shape.dims, order="F"), axis=1).astype(np.int64)
    noise = rng.standard_normal(q)

    obs0 = observations_from_arrays(shape, factors, indices, np.zeros(q))
    A_k = K.values @ W_true
    values = np.einsum("mr,mr->m", A_k[obs0.rows], obs0.Z) + spec.noise_sigma * noise
    obs = observations_from_arrays(shape, factors, indices, values)
    return make_problem(obs, factors, K, spec.lam, meta={"gen": spec}), W_true


def _manifest_fields(p: ProblemInstance) -> dict:
    spec: Optional[GenSpec] = p.meta.get("gen")
    kern = spec.kernel if spec else p.meta.get("kernel", KernelSpec())
    return {
        "shape": ",".join(str(x) for x in p.shape.dims),
        "mode": p.shape.mode,
        "rank": p.r,
        "lambda": formats.fmt(p.lam),
        "q": p.q,
        "seed": spec.seed if spec else p.meta.get("seed", ""),
        "kernel": kern.family,
        "lengthscale": formats.fmt(kern.lengthscale),
        "jitter": formats.fmt(kern.jitter),
        "noise_sigma": formats.fmt(spec.noise_sigma if spec else p.meta.get("noise_sigma", 0.0)),
    }


def write_instance(p: ProblemInstance, W_true, directory) -> list[Path]:
    """Write every file of the instance directory; the directory must exist."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"instance directory does not exist: {d}")
    written = []
    try:
        path = d / "observations.csv"
        formats.write_observations(path, p.shape, p.obs.indices, p.obs.values)
        written.append(path)
        for l, A in zip(p.shape.other_modes, p.factors.factors):
            path = d / f"factor_{l}.csv"
            formats.write_matrix(path, A)
            written.append(path)
        path = d / "kernel.csv"
        formats.write_matrix(path, p.Kv)
        written.append(path)
        path = d / "ground_truth.csv"
        formats.write_matrix(path, W_true)
        written.append(path)
        path = d / "manifest.txt"
        formats.write_manifest(path, _manifest_fields(p))
        written.append(path)
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    return written


def read_instance(directory) -> tuple[ProblemInstance, np.ndarray]:
    """Inverse of :func:`write_instance`."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"instance directory does not exist: {d}")
    man = formats.read_manifest(d / "manifest.txt")
    shape, indices, values = formats.read_observations(d / "observations.csv")
    dims = tuple(int(x) for x in man["shape"].split(","))
    if dims != shape.dims or int(man["mode"]) != shape.mode:
        raise ValidationError(f"{d}: manifest shape/mode disagree with observations.csv")
    factors = FactorSet(tuple(formats.read_matrix(d / f"factor_{l}.csv") for l in shape.other_modes))
    if factors.rank != int(man["rank"]):
        raise ValidationError(f"{d}: manifest rank {man['rank']} but factors have rank {factors.rank}")
    Kv = formats.read_matrix(d / "kernel.csv")
    K = KernelMatrix(values=Kv, points=grid_points(shape.n))
    W_true = formats.read_matrix(d / "ground_truth.csv")
    kern = KernelSpec(man.get("kernel", "rbf"), float(man.get("lengthscale", 0.3)), float(man.get("jitter", 0.0)))
    meta = {
        "kernel": kern,
        "seed": man.get("seed", ""),
        "noise_sigma": float(man.get("noise_sigma", 0.0)),
        "manifest": man,
    }
    obs = observations_from_arrays(shape, factors, indices, values)
    return make_problem(obs, factors, K, float(man["lambda"]), meta=meta), W_true


def hand_instance(lam: float = 1.0) -> ProblemInstance:
    """The 1x1 system: K = [2], one observation with z = (3), y = 1.

    With lam = 1 this gives H = [38], C = [6] and W = [3/19].
    """
    shape = Shape((1, 1), 0)
    factors = FactorSet((np.array([[3.0]]),))
    obs = build_observation_set(shape, factors, [((0, 0), 1.0)])
    K = KernelMatrix(values=np.array([[2.0]]), points=np.zeros(1))
    return make_problem(obs, factors, K, lam)
