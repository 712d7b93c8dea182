"""Sensing operators on symmetric matrices.

A Gaussian-design operator maps a symmetric n x n matrix M to m inner
products <A_i, M> where each A_i is symmetric with diagonal entries
N(0, 1/m) and off-diagonal entries N(0, 1/(2m)).

Internally matrices live in scaled symmetric vectorization (svec)
coordinates: the upper triangle flattened row-major with off-diagonal
entries multiplied by sqrt(2), so the Frobenius inner product is a plain
dot product.  In svec coordinates every entry of a Gaussian-design row is
i.i.d. N(0, 1/m), so row i of the operator is exactly

    normals(seed, stream=i, count=n(n+1)/2) / sqrt(m)

from the package's documented Philox/Box-Muller stream (see rng.py).  The
dense backend materializes the m x n(n+1)/2 array; the streamed backend
regenerates rows on demand in fixed-size chunks, which keeps the
accumulation order independent of how the work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .problem import NoiseModel, dense_m_star

DEFAULT_MEMORY_CAP_BYTES = 2 << 30  # 2 GiB
_STREAM_CHUNK = 256
_RIP_EIGS_PAD = 1e-300  # keep trial eigenvalues away from exact zero


class MemoryCapError(MemoryError):
    pass


def _svec_scale(n: int) -> tuple[tuple[np.ndarray, np.ndarray], np.ndarray]:
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return iu, scale


class SensingOperator:
    """Linear map from symmetric n x n matrices to R^m.

    kind is one of 'gaussian_dense', 'gaussian_streamed', 'identity'.
    Instances are immutable after construction and safe for concurrent use.
    """

    def __init__(self, kind: str, n: int, m: int, seed: int = 0,
                 storage: np.ndarray | None = None):
        self.kind = kind
        self.n = n
        self.m = m
        self.seed = seed
        self._storage = storage
        self._iu, self._scale = _svec_scale(n)
        self.dim = self._scale.size  # n(n+1)/2

    # -- svec coordinates ---------------------------------------------------

    def svec(self, mat: np.ndarray) -> np.ndarray:
        if mat.shape != (self.n, self.n):
            raise ValueError(f"expected {self.n}x{self.n} matrix, got {mat.shape}")
        sym = 0.5 * (mat + mat.T)
        return sym[self._iu] * self._scale

    def unsvec(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self._iu] = v / self._scale
        out = out + out.T
        out[np.diag_indices(self.n)] *= 0.5
        return out

    def row_svec(self, i: int) -> np.ndarray:
        """Row i of a Gaussian operator in svec coordinates (bit-exact contract)."""
        return rng.normals(self.seed, i, self.dim) / np.sqrt(self.m)

    def _rows(self, lo: int, hi: int) -> np.ndarray:
        if self.kind == "gaussian_dense":
            return self._storage[lo:hi]
        out = np.empty((hi - lo, self.dim))
        for i in range(lo, hi):
            out[i - lo] = self.row_svec(i)
        return out

    def sensing_matrix(self, i: int) -> np.ndarray:
        """A_i as a dense symmetric matrix."""
        if self.kind == "identity":
            e = np.zeros(self.m)
            e[i] = 1.0
            return self.unsvec(e)
        return self.unsvec(self._rows(i, i + 1)[0])

    # -- forward / adjoint / normal ------------------------------------------

    def apply_forward(self, mat: np.ndarray) -> np.ndarray:
        v = self.svec(mat)
        if self.kind == "identity":
            return v
        if self.kind == "gaussian_dense":
            return self._storage @ v
        y = np.empty(self.m)
        for lo in range(0, self.m, _STREAM_CHUNK):
            hi = min(lo + _STREAM_CHUNK, self.m)
            y[lo:hi] = self._rows(lo, hi) @ v
        return y

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.m,):
            raise ValueError(f"expected length-{self.m} vector, got {y.shape}")
        if self.kind == "identity":
            return self.unsvec(y)
        if self.kind == "gaussian_dense":
            return self.unsvec(self._storage.T @ y)
        acc = np.zeros(self.dim)
        for lo in range(0, self.m, _STREAM_CHUNK):
            hi = min(lo + _STREAM_CHUNK, self.m)
            acc += self._rows(lo, hi).T @ y[lo:hi]
        return self.unsvec(acc)

    def apply_normal(self, mat: np.ndarray) -> np.ndarray:
        """A*A(mat); one fused pass per row chunk for the streamed backend."""
        if self.kind == "identity":
            return self.unsvec(self.svec(mat))
        if self.kind == "gaussian_dense":
            return self.unsvec(self._storage.T @ (self._storage @ self.svec(mat)))
        v = self.svec(mat)
        acc = np.zeros(self.dim)
        for lo in range(0, self.m, _STREAM_CHUNK):
            hi = min(lo + _STREAM_CHUNK, self.m)
            rows = self._rows(lo, hi)
            acc += rows.T @ (rows @ v)
        return self.unsvec(acc)


def gaussian_operator(n: int, m: int, seed: int, backend: str = "dense",
                      memory_cap_bytes: int = DEFAULT_MEMORY_CAP_BYTES) -> SensingOperator:
    if m < 1:
        raise ValueError("m must be >= 1")
    dim = n * (n + 1) // 2
    if backend == "dense":
        nbytes = 8 * m * dim
        if nbytes > memory_cap_bytes:
            raise MemoryCapError(
                f"dense Gaussian operator needs {nbytes / 2**30:.2f} GiB "
                f"(cap {memory_cap_bytes / 2**30:.2f} GiB); use backend='streamed'")
        storage = np.empty((m, dim))
        inv_sqrt_m = 1.0 / np.sqrt(m)
        for i in range(m):
            storage[i] = rng.normals(seed, i, dim)
        storage *= inv_sqrt_m
        return SensingOperator("gaussian_dense", n, m, seed, storage)
    if backend == "streamed":
        return SensingOperator("gaussian_streamed", n, m, seed)
    raise ValueError(f"unknown backend {backend!r}")


def identity_operator(n: int) -> SensingOperator:
    """Exact isometry: forward is scaled svec, A*A is the identity."""
    return SensingOperator("identity", n, n * (n + 1) // 2)


# module-level aliases matching the operation names
def apply_forward(op: SensingOperator, mat: np.ndarray) -> np.ndarray:
    return op.apply_forward(mat)


def apply_adjoint(op: SensingOperator, y: np.ndarray) -> np.ndarray:
    return op.apply_adjoint(y)


def apply_normal(op: SensingOperator, mat: np.ndarray) -> np.ndarray:
    return op.apply_normal(mat)


@dataclass(frozen=True)
class Measurements:
    y: np.ndarray
    sigma: float
    seed_noise: int


def measure(op: SensingOperator, truth, noise: NoiseModel | None = None) -> Measurements:
    """y = A(M*) + xi with xi i.i.d. N(0, sigma^2); sigma = 0 is bit-exact noiseless."""
    if noise is None:
        noise = NoiseModel()
    y = op.apply_forward(dense_m_star(truth))
    if noise.sigma > 0:
        y = y + noise.draw(op.m)
    return Measurements(y=y, sigma=noise.sigma, seed_noise=noise.seed)


@dataclass(frozen=True)
class RipEstimate:
    """Sampled lower bound on the rank-r restricted isometry constant.

    delta_hat = max(1 - min_ratio, max_ratio - 1) over sampled ratios
    ||A(M)||^2 / ||M||_F^2; the true constant can only be larger, so this
    is a sanity probe, not a certificate.
    """

    rank: int
    trials: int
    delta_hat: float
    min_ratio: float
    max_ratio: float


def estimate_rip_constant(op: SensingOperator, rank: int, trials: int,
                          seed: int) -> RipEstimate:
    if rank > op.n:
        raise ValueError("rank exceeds ambient dimension")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = op.n
    min_ratio = np.inf
    max_ratio = -np.inf
    for t in range(trials):
        gen = rng.uniform_stream(seed, t)
        g = rng.normals_from(gen, n * rank).reshape(n, rank)
        q, _ = np.linalg.qr(g)
        mags = gen.random(rank) + _RIP_EIGS_PAD
        signs = np.where(gen.random(rank) < 0.5, -1.0, 1.0)
        lam = signs * mags
        lam /= np.linalg.norm(lam)
        mat = (q * lam) @ q.T
        v = op.svec(mat)
        denom = float(v @ v)  # ||M||_F^2 in the same coordinates
        if op.kind == "identity":
            num = denom  # forward of the identity is v itself
        else:
            ym = op.apply_forward(mat)
            num = float(ym @ ym)
        ratio = num / denom
        min_ratio = min(min_ratio, ratio)
        max_ratio = max(max_ratio, ratio)
    delta_hat = max(1.0 - min_ratio, max_ratio - 1.0, 0.0)
    return RipEstimate(rank=rank, trials=trials, delta_hat=delta_hat,
                       min_ratio=min_ratio, max_ratio=max_ratio)
