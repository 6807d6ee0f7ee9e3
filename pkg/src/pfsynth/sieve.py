"""One-class SVM that screens synthetic spectrograms against real ones.

The dual problem::

    minimize    1/2 sum_ij b_i b_j K(x_i, x_j)
    subject to  0 <= b_i <= 1 / (nu * l),   sum_i b_i = 1

is solved by sequential minimal optimization with maximal-violating-pair
selection. The decision value of a query x is ``sum_i b_i K(x_i, x) - rho``;
samples with a nonnegative value are kept. Values within ``MARGIN_TOL``
of zero are reported as exactly zero, so margin points count as inside.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .preprocess import Spectrogram

FEATURE_GRID = 32
DEFAULT_NU = 0.1
MAX_ITER = 100_000
TOLERANCE = 1e-9
# decision values this close to zero are margin points; the solver fixes rho only to ~TOLERANCE
MARGIN_TOL = 1e-8

MODEL_MAGIC = b"PFSV"
MODEL_VERSION = 1


class SvmConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"SMO did not converge in {iterations} iterations (KKT residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


class SvmFormatError(ValueError):
    pass


def featurize(spec: Spectrogram | np.ndarray, grid: int = FEATURE_GRID) -> np.ndarray:
    """Average-pool channel 0 to ``grid x grid`` and flatten."""
    img = spec.image if isinstance(spec, Spectrogram) else np.asarray(spec)
    if img.ndim == 3:
        img = img[:, :, 0]
    h, w = img.shape
    if h % grid or w % grid:
        raise ValueError(f"image {h}x{w} does not pool evenly onto a {grid}x{grid} grid")
    pooled = img.astype(np.float64).reshape(grid, h // grid, grid, w // grid).mean(axis=(1, 3))
    return pooled.reshape(-1)


def rbf_kernel(x, y, gamma: float) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"feature lengths differ: {x.shape} vs {y.shape}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = x - y
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature lengths differ: {a.shape[1]} vs {b.shape[1]}")
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def scale_gamma(features: np.ndarray) -> float:
    """``1 / (n_features * var(X))``; 1.0 for constant data."""
    x = np.asarray(features, dtype=np.float64)
    var = float(x.var())
    return 1.0 / (x.shape[1] * var) if var > 0 else 1.0


@dataclass
class OcsvmModel:
    support_vectors: np.ndarray  # m x d
    beta: np.ndarray  # m, positive, sums to 1
    rho: float
    gamma: float
    nu: float

    def __post_init__(self):
        if not 0.0 < self.nu <= 1.0:
            raise ValueError(f"nu must lie in (0, 1], got {self.nu}")

    def decision(self, features: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        v = rbf_matrix(x, self.support_vectors, self.gamma) @ self.beta - self.rho
        v[np.abs(v) <= MARGIN_TOL] = 0.0
        return v

    # -- file format --------------------------------------------------------------
    def to_bytes(self) -> bytes:
        m, d = self.support_vectors.shape
        head = MODEL_MAGIC + struct.pack("<HdddII", MODEL_VERSION, self.gamma, self.nu, self.rho, m, d)
        return head + self.support_vectors.astype("<f8").tobytes() + self.beta.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "OcsvmModel":
        if buf[:4] != MODEL_MAGIC:
            raise SvmFormatError("not a one-class SVM model (bad magic)")
        fmt = "<HdddII"
        try:
            version, gamma, nu, rho, m, d = struct.unpack_from(fmt, buf, 4)
        except struct.error:
            raise SvmFormatError("truncated model header") from None
        if version != MODEL_VERSION:
            raise SvmFormatError(f"model version {version}, expected {MODEL_VERSION}")
        pos = 4 + struct.calcsize(fmt)
        if len(buf) != pos + 8 * (m * d + m):
            raise SvmFormatError("model payload length mismatch")
        sv = np.frombuffer(buf, "<f8", m * d, pos).reshape(m, d).copy()
        beta = np.frombuffer(buf, "<f8", m, pos + 8 * m * d).copy()
        return cls(sv, beta, rho, gamma, nu)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "OcsvmModel":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass
class DualSolution:
    beta: np.ndarray  # length l, one per training point
    rho: float
    objective: float
    iterations: int
    residual: float


def solve_dual(K: np.ndarray, nu: float, tol: float = TOLERANCE, max_iter: int = MAX_ITER) -> DualSolution:
    """SMO on the one-class dual for a precomputed kernel matrix."""
    l = K.shape[0]
    if l < 1:
        raise ValueError("need at least one training point")
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    C = 1.0 / (nu * l)
    beta = np.zeros(l)
    remaining = 1.0
    for i in range(l):
        beta[i] = min(C, remaining)
        remaining -= beta[i]
        if remaining <= 0:
            break
    g = K @ beta
    diag = np.diag(K)

    it, residual = 0, 0.0
    while True:
        up = beta < C
        low = beta > 0
        i = int(np.argmin(np.where(up, g, np.inf)))
        j = int(np.argmax(np.where(low, g, -np.inf)))
        residual = float(g[j] - g[i]) if up.any() and low.any() else 0.0
        if residual <= tol:
            break
        if it >= max_iter:
            raise SvmConvergenceError(residual, it)
        curv = max(diag[i] + diag[j] - 2.0 * K[i, j], 1e-12)
        delta = min(residual / curv, C - beta[i], beta[j])
        beta[i] += delta
        beta[j] -= delta
        g += delta * (K[:, i] - K[:, j])
        it += 1

    beta = np.clip(beta, 0.0, C)
    beta /= beta.sum()
    g = K @ beta
    free = (beta > 1e-12 * C) & (beta < C * (1 - 1e-12))
    if free.any():
        rho = float(g[free].mean())
    else:
        at_c = beta >= C * (1 - 1e-12)
        lo = float(g[at_c].max()) if at_c.any() else -np.inf
        hi = float(g[~at_c & (beta <= 1e-12 * C)].min()) if (~at_c & (beta <= 1e-12 * C)).any() else np.inf
        rho = 0.5 * (lo + hi) if np.isfinite(lo) and np.isfinite(hi) else (lo if np.isfinite(lo) else hi)
    return DualSolution(beta, rho, float(0.5 * beta @ g), it, residual)


def train_ocsvm(features, nu: float = DEFAULT_NU, gamma: float | str = "scale", tol: float = TOLERANCE, max_iter: int = MAX_ITER) -> OcsvmModel:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if len(x) < 1:
        raise ValueError("need at least one training vector")
    g = scale_gamma(x) if gamma == "scale" else float(gamma)
    if g <= 0:
        raise ValueError("gamma must be positive")
    sol = solve_dual(rbf_matrix(x, x, g), nu, tol, max_iter)
    keep = sol.beta > 0
    return OcsvmModel(x[keep].copy(), sol.beta[keep].copy(), sol.rho, g, nu)


def decision_value(model: OcsvmModel, feature) -> float:
    return float(model.decision(np.asarray(feature))[0])


@dataclass
class FilterResult:
    kept: list
    decisions: np.ndarray

    @property
    def kept_count(self) -> int:
        return len(self.kept)

    @property
    def discarded_count(self) -> int:
        return len(self.decisions) - len(self.kept)


def filter_samples(model: OcsvmModel, samples: Sequence[Spectrogram], grid: int = FEATURE_GRID) -> FilterResult:
    """Keep, in order, the samples whose decision value is >= 0."""
    if not samples:
        return FilterResult([], np.zeros(0))
    dec = model.decision(np.stack([featurize(s, grid) for s in samples]))
    return FilterResult([s for s, v in zip(samples, dec) if v >= 0.0], dec)
