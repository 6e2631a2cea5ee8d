# incsfa.py
"""
incsfa.py - Incremental slow feature analysis

The adaptive abstraction is a linear map from raw observations to J slow
outputs, learned one sample at a time:

1. amnesic running mean
2. candid covariance-free incremental PCA (CCIPCA) for the K leading
   principal components; whitening rows are v_i / sqrt(lambda_i)
3. whitened derivative  zdot = S (x(t) - x(t-1)) folded into a short-memory
   derivative covariance Cdot (exponential average over `derivative_memory`
   samples)
4. minor component analysis on Cdot / trace(Cdot) with lateral inhibition
   for W (J x K)

The composite map phi = W S is applied to centered input. Every update
reports xi, the Frobenius norm of the change of phi, which feeds the
curiosity reward through WeightChangeTracker.
"""

from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from core.exceptions import (
    DimensionMismatchError,
    InsufficientStatisticsError,
    NonFiniteInputError,
    SingularCovarianceError,
)
from core.logger import get_logger

logger = get_logger(__name__)

_TINY = 1e-12


def random_orthonormal_rows(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Random matrix of shape (rows, cols) with orthonormal rows"""
    if rows > cols:
        raise ValueError(f"cannot build {rows} orthonormal rows in dimension {cols}")
    q, r = np.linalg.qr(rng.standard_normal((cols, rows)))
    # Sign fix makes the draw unique for a given Gaussian matrix
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    return q.T.copy()


class AdaptiveAbstraction:
    """
    Online slow-feature extractor.

    **Inputs**

      ``input_dim``
          Dimension I of the observations

      ``output_dim`` (default: 2)
          Number J of slow features

      ``whitening_dim`` (default: I)
          Number K of principal components kept for whitening

      ``nu`` (default: 0.05)
          Learning rate of the minor component update

      ``lateral_inhibition`` (default: 2.0)
          Coefficient pushing w_i away from the earlier w_j

      ``amnesic`` (default: 2.0)
          Amnesic parameter mu of the mean and CCIPCA rates (1 + mu) / t;
          plain averaging (1 / t) until t exceeds 1 + mu

      ``warmup`` (default: 50)
          Samples before W starts to learn; xi is 0 until then

      ``derivative_memory`` (default: 50)
          Samples averaged into the derivative covariance that drives W;
          1 gives the instantaneous rule zdot zdot^T

    **Instance variables of interest**

      ``mean``
         Amnesic input mean

      ``eigenvalues``
         CCIPCA eigenvalue estimates (norms of the unnormalized components)

      ``w``
         Slow-feature weights in whitened space, unit-norm rows
    """

    def __init__(self, input_dim: int, output_dim: int = 2, whitening_dim: Optional[int] = None,
                 nu: float = 0.05, lateral_inhibition: float = 2.0, amnesic: float = 2.0,
                 warmup: int = 50, derivative_memory: int = 50, rng: Optional[np.random.Generator] = None):
        whitening_dim = input_dim if whitening_dim is None else min(whitening_dim, input_dim)
        if not 1 <= output_dim <= whitening_dim:
            raise ValueError(f"need 1 <= output_dim ({output_dim}) <= whitening_dim ({whitening_dim})")
        if derivative_memory < 1:
            raise ValueError(f"derivative_memory must be >= 1, got {derivative_memory}")
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.whitening_dim = whitening_dim
        self.nu = nu
        self.lateral_inhibition = lateral_inhibition
        self.amnesic = amnesic
        self.warmup = warmup
        self.derivative_memory = derivative_memory

        rng = rng if rng is not None else np.random.default_rng()
        self.n = 0
        self.mean = np.zeros(input_dim)
        self._v = np.zeros((whitening_dim, input_dim))
        self._counts = np.zeros(whitening_dim, dtype=np.int64)
        self.w = random_orthonormal_rows(output_dim, whitening_dim, rng)
        self._dcov = np.zeros((whitening_dim, whitening_dim))
        self._x_prev: Optional[np.ndarray] = None
        self._phi = np.zeros((output_dim, input_dim))

    # ----- derived matrices -----

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.norm(self._v, axis=1)

    @property
    def components(self) -> np.ndarray:
        """Normalized principal components, zero rows where not yet initialized"""
        norms = self.eigenvalues
        safe = np.where(norms > _TINY, norms, 1.0)
        return np.where((norms > _TINY)[:, None], self._v / safe[:, None], 0.0)

    @property
    def whitening(self) -> np.ndarray:
        """Whitening matrix S of shape (K, I)"""
        lam = self.eigenvalues
        scale = np.where(lam > _TINY, 1.0 / np.sqrt(np.where(lam > _TINY, lam, 1.0)), 0.0)
        return self.components * scale[:, None]

    @property
    def composite(self) -> np.ndarray:
        """Composite map phi = W S acting on centered input, shape (J, I)"""
        return self._phi.copy()

    @property
    def is_warm(self) -> bool:
        return self.n >= self.warmup

    # ----- learning -----

    def _rate(self, count: int) -> float:
        # (1 + mu) / t would exceed 1 for the first samples
        if count <= 1.0 + self.amnesic:
            return 1.0 / count
        return (1.0 + self.amnesic) / count

    def _update_pca(self, u: np.ndarray):
        residual = u
        for i in range(self.whitening_dim):
            if self._counts[i] == 0:
                # One new component per sample, seeded with the residual
                if np.linalg.norm(residual) > _TINY:
                    self._v[i] = residual
                    self._counts[i] = 1
                break
            self._counts[i] += 1
            rate = self._rate(int(self._counts[i]))
            v = self._v[i]
            v_norm = np.linalg.norm(v)
            v = (1.0 - rate) * v + rate * (residual @ v / v_norm) * residual
            self._v[i] = v
            v_norm = np.linalg.norm(v)
            if v_norm <= _TINY:
                break
            v_hat = v / v_norm
            residual = residual - (residual @ v_hat) * v_hat

    def _update_mca(self, zdot: np.ndarray):
        self._dcov += (np.outer(zdot, zdot) - self._dcov) / self.derivative_memory
        scale = np.trace(self._dcov)
        if scale <= _TINY:
            return
        # Unit trace keeps the step size independent of the stream's speed
        c = self._dcov / scale
        w = self.w
        for i in range(self.output_dim):
            wi = w[i]
            grad = c @ wi
            if i > 0:
                grad = grad + self.lateral_inhibition * (w[:i].T @ (w[:i] @ wi))
            wi = wi - self.nu * grad
            norm = np.linalg.norm(wi)
            if norm > _TINY:
                w[i] = wi / norm

    def begin_segment(self):
        """Forget the predecessor sample so the next update skips its derivative"""
        self._x_prev = None

    def update(self, x: Sequence[float]) -> float:
        """
        Advance the abstraction by one observation.

        Args:
            x: Observation of dimension I

        Returns:
            xi, the Frobenius norm of the change of the composite map (0 during warm-up)

        Raises:
            DimensionMismatchError: x has the wrong dimension
            NonFiniteInputError: x contains NaN or inf
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise DimensionMismatchError(f"expected input of dimension {self.input_dim}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NonFiniteInputError("observation contains non-finite components")

        self.n += 1
        self.mean += self._rate(self.n) * (x - self.mean)
        self._update_pca(x - self.mean)
        s = self.whitening

        learning = self.n > self.warmup
        if learning and self._x_prev is not None:
            self._update_mca(s @ (x - self._x_prev))
        self._x_prev = x

        phi = self.w @ s
        xi = float(np.linalg.norm(phi - self._phi)) if learning else 0.0
        self._phi = phi
        return xi

    def update_batch(self, samples: np.ndarray) -> np.ndarray:
        """Update sample by sample; returns the xi of every step"""
        return np.array([self.update(x) for x in np.asarray(samples, dtype=float)])

    # ----- outputs -----

    def output(self, x: np.ndarray) -> np.ndarray:
        """
        Slow outputs y = phi (x - mean) for one sample (I,) or a batch (T, I).

        Raises:
            InsufficientStatisticsError: Called before warm-up completed
            DimensionMismatchError: x has the wrong dimension
        """
        if not self.is_warm:
            raise InsufficientStatisticsError(
                f"abstraction has seen {self.n} of {self.warmup} warm-up samples"
            )
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise DimensionMismatchError(f"expected input of dimension {self.input_dim}, got {x.shape}")
        return (x - self.mean) @ self._phi.T

    # ----- serialization -----

    def to_dict(self) -> Dict[str, Any]:
        return {
            "header": {
                "kind": "adaptive",
                "input_dim": self.input_dim,
                "output_dim": self.output_dim,
                "whitening_dim": self.whitening_dim,
                "nu": self.nu,
                "lateral_inhibition": self.lateral_inhibition,
                "amnesic": self.amnesic,
                "warmup": self.warmup,
                "derivative_memory": self.derivative_memory,
                "n": self.n,
            },
            "arrays": {
                "mean": self.mean.tolist(),
                "v": self._v.ravel().tolist(),
                "counts": self._counts.tolist(),
                "w": self.w.ravel().tolist(),
                "dcov": self._dcov.ravel().tolist(),
                "phi": self._phi.ravel().tolist(),
                "x_prev": None if self._x_prev is None else self._x_prev.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AdaptiveAbstraction":
        h, a = data["header"], data["arrays"]
        obj = cls(h["input_dim"], h["output_dim"], h["whitening_dim"], nu=h["nu"],
                  lateral_inhibition=h["lateral_inhibition"], amnesic=h["amnesic"],
                  warmup=h["warmup"], derivative_memory=h["derivative_memory"],
                  rng=np.random.default_rng(0))
        k, i, j = h["whitening_dim"], h["input_dim"], h["output_dim"]
        obj.n = h["n"]
        obj.mean = np.array(a["mean"], dtype=float)
        obj._v = np.array(a["v"], dtype=float).reshape(k, i)
        obj._counts = np.array(a["counts"], dtype=np.int64)
        obj.w = np.array(a["w"], dtype=float).reshape(j, k)
        obj._dcov = np.array(a["dcov"], dtype=float).reshape(k, k)
        obj._phi = np.array(a["phi"], dtype=float).reshape(j, i)
        obj._x_prev = None if a["x_prev"] is None else np.array(a["x_prev"], dtype=float)
        return obj


class WeightChangeTracker:
    """Window means of xi over consecutive windows of `window` updates"""

    def __init__(self, window: int):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.last = 0.0
        self.windows = 0
        self.previous_mean: Optional[float] = None
        self.current_mean: Optional[float] = None
        self._acc = []

    def push(self, xi: float):
        if xi < 0:
            raise ValueError(f"xi is a norm and cannot be negative, got {xi}")
        self.last = float(xi)
        self._acc.append(self.last)
        if len(self._acc) == self.window:
            self.previous_mean = self.current_mean
            self.current_mean = float(np.mean(self._acc))
            self.windows += 1
            self._acc = []

    def extend(self, values: Sequence[float]):
        for xi in values:
            self.push(xi)

    @property
    def ready(self) -> bool:
        return self.windows >= 2


def window_means(tracker: WeightChangeTracker) -> Tuple[float, float]:
    """
    Current window mean of xi and its difference to the previous window.

    Raises:
        InsufficientStatisticsError: Fewer than two full windows so far
    """
    if not tracker.ready:
        raise InsufficientStatisticsError(f"need 2 full windows, have {tracker.windows}")
    return tracker.current_mean, tracker.current_mean - tracker.previous_mean


def batch_sfa_oracle(data: np.ndarray, output_dim: int) -> np.ndarray:
    """
    Standard batch SFA: whiten, then take the smallest-eigenvalue directions
    of the derivative covariance.

    Args:
        data: Array of shape (T, I), T >= I + 1
        output_dim: Number J of slow features

    Returns:
        Weight matrix of shape (J, I) acting on data centered by its own mean,
        slowest feature first

    Raises:
        SingularCovarianceError: Rank-deficient input covariance
    """
    data = np.asarray(data, dtype=float)
    t, dim = data.shape
    if t < dim + 1:
        raise SingularCovarianceError(f"need at least {dim + 1} samples, got {t}")
    centered = data - data.mean(axis=0)
    cov = np.atleast_2d(np.cov(centered, rowvar=False))
    d, e = linalg.eigh(cov)
    if d[0] <= _TINY * max(d[-1], 1.0):
        raise SingularCovarianceError(f"input covariance is singular (smallest eigenvalue {d[0]:.3g})")
    whitening = (e / np.sqrt(d)).T

    zdot = np.diff(centered @ whitening.T, axis=0)
    dcov = zdot.T @ zdot / len(zdot)
    _, u = linalg.eigh(dcov)
    return u[:, :output_dim].T @ whitening
