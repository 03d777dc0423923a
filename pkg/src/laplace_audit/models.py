"""Target-density models.

A target is described by the negative log-density ``phi(theta) = -log f~(theta)``
of an *unnormalized* density ``f~``, together with analytic derivatives. The
additive constant of ``phi`` is fixed per model instance (no normalization), so
normalizing-constant estimation downstream is meaningful.

Built-in models: multivariate Gaussian (quadratic ``phi``) and Bayesian
logistic regression with an isotropic Gaussian prior. Both provide closed-form
gradients, Hessians and directional derivatives up to fourth order, which the
certificate machinery needs along rays through the mode.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatchError, UnsupportedOrderError

# max_t |d^4/dt^4 log(1 + exp(-t))| — attained at t = 0; validated against a
# grid-maximization oracle in the test suite.
SIGMOID_THIRD_DERIVATIVE_MAX = 0.125


class TargetModel(abc.ABC):
    """Interface for an unnormalized log-concave target density.

    Subclasses must set ``dim`` and implement ``neg_log_density``,
    ``gradient``, ``hessian`` and ``ray_derivatives``. The vectorized hooks
    (``ray_values``, ``ray_derivative_profile``, ``neg_log_density_many``,
    ``gradient_many``) have generic loop-based defaults and exist so models
    with structure can avoid per-point Python overhead. Evaluation is pure
    and stateless after construction.
    """

    dim: int

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise DimensionMismatchError(
                f"expected a vector of length {self.dim}, got shape {theta.shape}"
            )
        return theta

    @abc.abstractmethod
    def neg_log_density(self, theta) -> float:
        """Return phi(theta) = -log f~(theta)."""

    @abc.abstractmethod
    def gradient(self, theta) -> np.ndarray:
        """Return the gradient of phi at theta."""

    @abc.abstractmethod
    def hessian(self, theta) -> np.ndarray:
        """Return the (symmetric) Hessian of phi at theta."""

    @abc.abstractmethod
    def ray_derivatives(self, base, direction, r: float = 0.0, max_order: int = 4) -> np.ndarray:
        """Derivatives of ``t -> phi(base + t * direction)`` at ``t = r``.

        Parameters
        ----------
        base, direction : arrays of length ``dim``
            Ray origin and (already scaled) ray direction.
        r : float
            Offset along the ray at which to differentiate.
        max_order : int
            Highest derivative order, between 1 and 4.

        Returns
        -------
        numpy.ndarray
            Derivative values for orders ``1..max_order``.
        """

    @staticmethod
    def _check_order(max_order: int) -> None:
        if not 1 <= max_order <= 4:
            raise UnsupportedOrderError(f"max_order must be in 1..4, got {max_order}")

    # -- vectorized hooks with generic fallbacks ---------------------------

    def ray_values(self, base, direction, rs) -> np.ndarray:
        """phi(base + r * direction) for every r in ``rs``."""
        base = self._check_theta(base)
        direction = self._check_theta(direction)
        rs = np.asarray(rs, dtype=float)
        return np.array([self.neg_log_density(base + r * direction) for r in rs])

    def ray_derivative_profile(self, base, direction, rs, order: int) -> np.ndarray:
        """Order-``order`` ray derivative at every r in ``rs``."""
        self._check_order(order)
        rs = np.asarray(rs, dtype=float)
        return np.array(
            [self.ray_derivatives(base, direction, r, order)[order - 1] for r in rs]
        )

    def ray_fourth_derivative_bound(self, base, direction):
        """Optional analytic bound on |phi''''| along the whole ray, or None."""
        return None

    def neg_log_density_many(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        return np.array([self.neg_log_density(t) for t in thetas])

    def gradient_many(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        return np.array([self.gradient(t) for t in thetas])


class GaussianModel(TargetModel):
    """Multivariate Gaussian target, kept unnormalized.

    ``phi(theta) = 0.5 * (theta - mean)' P (theta - mean)`` with ``P`` the
    precision matrix, so the model is its own Laplace approximation and every
    ray derivative beyond second order is exactly zero.
    """

    def __init__(self, mean, covariance):
        mean = np.asarray(mean, dtype=float)
        covariance = np.asarray(covariance, dtype=float)
        if mean.ndim != 1:
            raise DimensionMismatchError("mean must be a vector")
        d = mean.shape[0]
        if covariance.shape != (d, d):
            raise DimensionMismatchError(
                f"covariance must be {d}x{d}, got {covariance.shape}"
            )
        covariance = 0.5 * (covariance + covariance.T)
        w, v = np.linalg.eigh(covariance)
        if w.min() <= 0:
            raise ValueError("covariance must be positive definite")
        self.dim = d
        self.mean = mean
        self.covariance = covariance
        self.precision = v @ np.diag(1.0 / w) @ v.T
        self.precision = 0.5 * (self.precision + self.precision.T)

    def neg_log_density(self, theta) -> float:
        delta = self._check_theta(theta) - self.mean
        return 0.5 * float(delta @ self.precision @ delta)

    def gradient(self, theta) -> np.ndarray:
        delta = self._check_theta(theta) - self.mean
        return self.precision @ delta

    def hessian(self, theta) -> np.ndarray:
        self._check_theta(theta)
        return self.precision.copy()

    def ray_derivatives(self, base, direction, r: float = 0.0, max_order: int = 4) -> np.ndarray:
        self._check_order(max_order)
        delta = self._check_theta(base) - self.mean
        v = self._check_theta(direction)
        pv = self.precision @ v
        out = np.zeros(max_order)
        out[0] = float((delta + r * v) @ pv)
        if max_order >= 2:
            out[1] = float(v @ pv)
        return out

    def ray_values(self, base, direction, rs) -> np.ndarray:
        delta = self._check_theta(base) - self.mean
        v = self._check_theta(direction)
        rs = np.asarray(rs, dtype=float)
        pv = self.precision @ v
        a = 0.5 * float(v @ pv)
        b = float(delta @ pv)
        c = 0.5 * float(delta @ self.precision @ delta)
        return c + b * rs + a * rs * rs

    def ray_derivative_profile(self, base, direction, rs, order: int) -> np.ndarray:
        self._check_order(order)
        delta = self._check_theta(base) - self.mean
        v = self._check_theta(direction)
        rs = np.asarray(rs, dtype=float)
        pv = self.precision @ v
        if order == 1:
            return float(delta @ pv) + rs * float(v @ pv)
        if order == 2:
            return np.full(rs.shape, float(v @ pv))
        return np.zeros(rs.shape)

    def ray_fourth_derivative_bound(self, base, direction) -> float:
        return 0.0

    def neg_log_density_many(self, thetas) -> np.ndarray:
        deltas = np.asarray(thetas, dtype=float) - self.mean
        return 0.5 * np.einsum("ij,jk,ik->i", deltas, self.precision, deltas)

    def gradient_many(self, thetas) -> np.ndarray:
        deltas = np.asarray(thetas, dtype=float) - self.mean
        return deltas @ self.precision


class LogisticRegressionModel(TargetModel):
    """Bayesian logistic regression posterior with a N(0, sigma0^2 I) prior.

    phi(theta) = ||theta||^2 / (2 sigma0^2) + sum_i log(1 + exp(-y_i x_i.theta))

    The log-likelihood terms are functions of the margins t_i = y_i x_i.theta,
    so all derivatives reduce to weighted sums of powers of projections; the
    scalar chain uses sigmoid identities and stays finite for |t| well beyond
    the exp overflow threshold.
    """

    def __init__(self, labels, covariates, prior_sigma0: float):
        y = np.asarray(labels, dtype=float)
        x = np.asarray(covariates, dtype=float)
        if x.ndim != 2:
            raise DimensionMismatchError("covariates must be an n x d matrix")
        if y.shape != (x.shape[0],):
            raise DimensionMismatchError(
                f"labels length {y.shape} does not match covariate rows {x.shape[0]}"
            )
        if y.size and not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must take values in {-1, +1}")
        sigma0 = float(prior_sigma0)
        if not np.isfinite(sigma0) or sigma0 <= 0:
            raise ValueError("prior_sigma0 must be a finite positive real")
        self.dim = x.shape[1]
        self.n_obs = x.shape[0]
        self.labels = y
        self.covariates = x
        self.prior_sigma0 = sigma0
        self._inv_prior_var = 1.0 / (sigma0 * sigma0)
        # rows y_i * x_i; margins are signed_x @ theta
        self._signed_x = np.ascontiguousarray(y[:, None] * x)

    @property
    def signed_covariates(self) -> np.ndarray:
        """Rows ``y_i * x_i``; the margin vector is ``signed_covariates @ theta``."""
        return self._signed_x

    def neg_log_density(self, theta) -> float:
        theta = self._check_theta(theta)
        t = self._signed_x @ theta
        return 0.5 * self._inv_prior_var * float(theta @ theta) + float(
            np.logaddexp(0.0, -t).sum()
        )

    def gradient(self, theta) -> np.ndarray:
        theta = self._check_theta(theta)
        t = self._signed_x @ theta
        return self._inv_prior_var * theta - self._signed_x.T @ expit(-t)

    def hessian(self, theta) -> np.ndarray:
        theta = self._check_theta(theta)
        t = self._signed_x @ theta
        w = expit(t) * expit(-t)
        h = (self._signed_x * w[:, None]).T @ self._signed_x
        h[np.diag_indices_from(h)] += self._inv_prior_var
        return 0.5 * (h + h.T)

    def ray_derivatives(self, base, direction, r: float = 0.0, max_order: int = 4) -> np.ndarray:
        self._check_order(max_order)
        base = self._check_theta(base)
        v = self._check_theta(direction)
        s = self._signed_x @ v
        t = self._signed_x @ base + r * s
        p = expit(t)
        q = expit(-t)
        w = p * q
        out = np.zeros(max_order)
        s_sq = s * s
        out[0] = self._inv_prior_var * float((base + r * v) @ v) - float(q @ s)
        if max_order >= 2:
            out[1] = self._inv_prior_var * float(v @ v) + float(w @ s_sq)
        if max_order >= 3:
            # explicit products keep odd powers exactly sign-symmetric in e
            out[2] = float((w * (1.0 - 2.0 * p)) @ (s_sq * s))
        if max_order >= 4:
            out[3] = float((w * (1.0 - 6.0 * p + 6.0 * p * p)) @ (s_sq * s_sq))
        return out

    def ray_values(self, base, direction, rs) -> np.ndarray:
        base = self._check_theta(base)
        v = self._check_theta(direction)
        rs = np.asarray(rs, dtype=float)
        s = self._signed_x @ v
        t0 = self._signed_x @ base
        t = t0[None, :] + rs[:, None] * s[None, :]
        quad = np.einsum("ij,ij->i", base[None, :] + rs[:, None] * v[None, :],
                         base[None, :] + rs[:, None] * v[None, :])
        return 0.5 * self._inv_prior_var * quad + np.logaddexp(0.0, -t).sum(axis=1)

    def ray_derivative_profile(self, base, direction, rs, order: int) -> np.ndarray:
        self._check_order(order)
        base = self._check_theta(base)
        v = self._check_theta(direction)
        rs = np.asarray(rs, dtype=float)
        s = self._signed_x @ v
        t = (self._signed_x @ base)[None, :] + rs[:, None] * s[None, :]
        p = expit(t)
        w = p * expit(-t)
        if order == 1:
            prior = self._inv_prior_var * (float(base @ v) + rs * float(v @ v))
            return prior - expit(-t) @ s
        s_sq = s * s
        if order == 2:
            return self._inv_prior_var * float(v @ v) + w @ s_sq
        if order == 3:
            return (w * (1.0 - 2.0 * p)) @ (s_sq * s)
        return (w * (1.0 - 6.0 * p + 6.0 * p * p)) @ (s_sq * s_sq)

    def ray_fourth_derivative_bound(self, base, direction) -> float:
        v = self._check_theta(direction)
        s = self._signed_x @ v
        s_sq = s * s
        return SIGMOID_THIRD_DERIVATIVE_MAX * float(np.sum(s_sq * s_sq))

    def neg_log_density_many(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        t = thetas @ self._signed_x.T
        quad = np.einsum("ij,ij->i", thetas, thetas)
        return 0.5 * self._inv_prior_var * quad + np.logaddexp(0.0, -t).sum(axis=1)

    def gradient_many(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        t = thetas @ self._signed_x.T
        return self._inv_prior_var * thetas - expit(-t) @ self._signed_x


@dataclass(frozen=True)
class SyntheticDatasetConfig:
    """Configuration for the self-generated logistic benchmark data.

    Covariates are i.i.d. standard normal; the true parameter is drawn with
    per-coordinate variance d^(-1/2) so margins stay order one regardless of
    dimension; labels follow the logistic law at the true parameter.
    """

    d: int
    n: int
    seed: int


@dataclass(frozen=True)
class LogisticDataset:
    labels: np.ndarray
    covariates: np.ndarray
    theta_true: np.ndarray

    def model(self, prior_sigma0: float) -> LogisticRegressionModel:
        return LogisticRegressionModel(self.labels, self.covariates, prior_sigma0)


def generate_dataset(config: SyntheticDatasetConfig) -> LogisticDataset:
    """Draw a synthetic logistic-regression dataset, bit-reproducible per seed."""
    if config.d < 1:
        raise ValueError("d must be >= 1")
    if config.n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    theta_true = rng.standard_normal(config.d) * config.d ** (-0.25)
    x = rng.standard_normal((config.n, config.d))
    p_plus = expit(x @ theta_true)
    y = np.where(rng.random(config.n) < p_plus, 1.0, -1.0)
    return LogisticDataset(labels=y, covariates=x, theta_true=theta_true)


def random_gaussian_model(d: int, seed: int) -> GaussianModel:
    """Seeded Gaussian target with a rotated dense covariance.

    Serves as the exact-null benchmark: the Laplace fit reproduces it, so
    every certificate term and the true KL are zero. Eigenvalues are drawn
    log-uniform in [0.5, 2] and rotated by a Haar-ish orthogonal factor.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(6,)))
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    lam = np.exp(rng.uniform(np.log(0.5), np.log(2.0), d))
    cov = (q * lam) @ q.T
    mean = rng.standard_normal(d)
    return GaussianModel(mean, 0.5 * (cov + cov.T))


def save_dataset_csv(path, labels, covariates) -> None:
    """Write a dataset as CSV with header ``y,x1,...,xd`` at 17 significant digits."""
    y = np.asarray(labels, dtype=float)
    x = np.asarray(covariates, dtype=float)
    d = x.shape[1]
    header = "y," + ",".join(f"x{j + 1}" for j in range(d))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(header + "\n")
        for yi, xi in zip(y, x):
            cells = [f"{yi:.17g}"] + [f"{v:.17g}" for v in xi]
            handle.write(",".join(cells) + "\n")


def load_dataset_csv(path):
    """Read a ``y,x1,...,xd`` CSV back into (labels, covariates)."""
    with open(path, "r", encoding="utf-8") as handle:
        header = handle.readline().strip()
        names = header.split(",")
        if not names or names[0] != "y" or any(
            name != f"x{j + 1}" for j, name in enumerate(names[1:])
        ):
            raise ValueError(f"unrecognized dataset header: {header!r}")
        d = len(names) - 1
        rows = [line.split(",") for line in handle if line.strip()]
    data = np.array([[float(cell) for cell in row] for row in rows], dtype=float)
    if data.size == 0:
        data = data.reshape(0, d + 1)
    if data.shape[1] != d + 1:
        raise ValueError("row width does not match header")
    y, x = data[:, 0], data[:, 1:]
    if y.size and not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must take values in {-1, +1}")
    return y, x
