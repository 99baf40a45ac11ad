"""Target densities with analytic derivatives up to third order.

Every target exposes the unnormalized log-density together with its
gradient, Hessian, and the per-coordinate derivatives of the Hessian.
Derivatives are hand-coded closed forms rather than autodiff: the targets
are desk-scale and closed forms are exactly testable against the
finite-difference oracle at the bottom of this module.

All evaluators are pure functions of their inputs and safe to call
concurrently.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractViolation


def _standard_normal_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


class TargetModel:
    """Base class: an unnormalized density on R^d with analytic derivatives.

    Attributes:
        d: Dimensionality.
        name: Short identifier used in configs and result files.
        constant_hessian: True when the Hessian does not depend on the
            position, in which case all Hessian partials vanish and
            downstream code may cache metric quantities.
    """

    d: int
    name: str = "target"
    constant_hessian: bool = False

    def _check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ContractViolation(
                f"{self.name}: expected point of shape ({self.d},), got {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise ContractViolation(f"{self.name}: non-finite point {x}")
        return x

    def log_density(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x) -> np.ndarray:
        raise NotImplementedError

    def hessian_partial(self, x, i: int) -> np.ndarray:
        """d(Hessian)/dx_i, a symmetric d x d matrix."""
        raise NotImplementedError

    def hessian_directional(self, x, v) -> np.ndarray:
        """Directional derivative of the Hessian along v (sum_k v_k dH/dx_k)."""
        x = self._check_point(x)
        v = np.asarray(v, dtype=float)
        out = np.zeros((self.d, self.d))
        for k in range(self.d):
            if v[k] != 0.0:
                out += v[k] * self.hessian_partial(x, k)
        return out

    def marginal_cdf_first(self, t: float) -> float:
        """Exact CDF of the first-coordinate marginal, when known."""
        raise ContractViolation(
            f"{self.name}: no analytic first-coordinate marginal CDF available"
        )

    def _check_index(self, i: int) -> int:
        if not 0 <= i < self.d:
            raise ContractViolation(
                f"{self.name}: coordinate index {i} out of range [0, {self.d})"
            )
        return i


class BananaTarget(TargetModel):
    """Two-dimensional banana-shaped density.

    log pi(x1, x2) = -b (x2 - x1^2)^2 - a (1 - x1)^2

    The density concentrates on a curved, narrow valley along x2 = x1^2.
    Integrating x2 out contributes an x1-independent constant, so the first
    coordinate is exactly Normal(mean 1, variance 1/(2a)).
    """

    name = "banana"
    constant_hessian = False

    def __init__(self, a: float = 1.0 / 20.0, b: float = 5000.0):
        self.a = float(a)
        self.b = float(b)
        self.d = 2

    def log_density(self, x) -> float:
        x = self._check_point(x)
        x1, x2 = x
        q = x2 - x1 * x1
        return -self.b * q * q - self.a * (1.0 - x1) ** 2

    def gradient(self, x) -> np.ndarray:
        x = self._check_point(x)
        x1, x2 = x
        q = x2 - x1 * x1
        g1 = 4.0 * self.b * x1 * q + 2.0 * self.a * (1.0 - x1)
        g2 = -2.0 * self.b * q
        return np.array([g1, g2])

    def hessian(self, x) -> np.ndarray:
        x = self._check_point(x)
        x1, x2 = x
        h11 = 4.0 * self.b * (x2 - 3.0 * x1 * x1) - 2.0 * self.a
        h12 = 4.0 * self.b * x1
        h22 = -2.0 * self.b
        return np.array([[h11, h12], [h12, h22]])

    def hessian_partial(self, x, i: int) -> np.ndarray:
        x = self._check_point(x)
        self._check_index(i)
        x1 = x[0]
        if i == 0:
            return np.array([[-24.0 * self.b * x1, 4.0 * self.b],
                             [4.0 * self.b, 0.0]])
        return np.array([[4.0 * self.b, 0.0], [0.0, 0.0]])

    def marginal_cdf_first(self, t: float) -> float:
        sigma = math.sqrt(1.0 / (2.0 * self.a))
        return _standard_normal_cdf((t - 1.0) / sigma)


class AnisotropicGaussianTarget(TargetModel):
    """Centered Gaussian with covariance Diag(1, 1/delta, ..., 1/delta).

    delta controls the spectral gap between the leading covariance
    eigenvalue and the remaining ones.  The first-coordinate marginal is
    Normal(0, 1) regardless of delta.
    """

    name = "gaussian"
    constant_hessian = True

    def __init__(self, d: int = 20, delta: float = 1.0):
        if d < 1:
            raise ContractViolation("gaussian: dimension must be >= 1")
        if delta <= 0:
            raise ContractViolation("gaussian: delta must be positive")
        self.d = int(d)
        self.delta = float(delta)
        prec = np.ones(self.d)
        prec[1:] = self.delta
        self.precision_diag = prec
        self._neg_hessian = np.diag(prec)

    def log_density(self, x) -> float:
        x = self._check_point(x)
        return -0.5 * float(np.dot(x * self.precision_diag, x))

    def gradient(self, x) -> np.ndarray:
        x = self._check_point(x)
        return -self.precision_diag * x

    def hessian(self, x) -> np.ndarray:
        self._check_point(x)
        return -self._neg_hessian.copy()

    def hessian_partial(self, x, i: int) -> np.ndarray:
        self._check_point(x)
        self._check_index(i)
        return np.zeros((self.d, self.d))

    def hessian_directional(self, x, v) -> np.ndarray:
        self._check_point(x)
        return np.zeros((self.d, self.d))

    def marginal_cdf_first(self, t: float) -> float:
        return _standard_normal_cdf(t)


class GaussianMixtureTarget(TargetModel):
    """Finite Gaussian mixture; used for metric visualization.

    Carries full analytic derivatives so the metric machinery can be
    exercised on a target whose local covariance structure varies between
    modes.  No analytic first-coordinate marginal CDF is exposed.
    """

    name = "mixture"
    constant_hessian = False

    def __init__(self, weights, means, covariances):
        w = np.asarray(weights, dtype=float)
        if np.any(w <= 0):
            raise ContractViolation("mixture: weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ContractViolation("mixture: weights must sum to 1")
        means = [np.asarray(m, dtype=float) for m in means]
        covs = [np.asarray(c, dtype=float) for c in covariances]
        if not means or len(means) != len(w) or len(covs) != len(w):
            raise ContractViolation("mixture: weights/means/covariances length mismatch")
        self.d = means[0].shape[0]
        self.weights = w
        self.means = means
        self.precisions = [np.linalg.inv(c) for c in covs]
        # log of w_k * (2 pi)^{-d/2} |Sigma_k|^{-1/2}
        self._log_norms = np.array([
            math.log(wk) - 0.5 * self.d * math.log(2 * math.pi)
            - 0.5 * float(np.linalg.slogdet(c)[1])
            for wk, c in zip(w, covs)
        ])

    def _component_logs(self, x):
        """Per-component log p_k(x) and score vectors g_k = -P_k (x - m_k)."""
        logs = np.empty(len(self.weights))
        scores = []
        for k, (m, P) in enumerate(zip(self.means, self.precisions)):
            r = x - m
            g = -P @ r
            logs[k] = self._log_norms[k] + 0.5 * float(np.dot(g, r))
            scores.append(g)
        return logs, scores

    def _responsibilities(self, x):
        logs, scores = self._component_logs(x)
        m = logs.max()
        p = np.exp(logs - m)
        return p / p.sum(), scores, m + math.log(p.sum())

    def log_density(self, x) -> float:
        x = self._check_point(x)
        return self._responsibilities(x)[2]

    def gradient(self, x) -> np.ndarray:
        x = self._check_point(x)
        r, scores, _ = self._responsibilities(x)
        out = np.zeros(self.d)
        for rk, g in zip(r, scores):
            out += rk * g
        return out

    def hessian(self, x) -> np.ndarray:
        x = self._check_point(x)
        r, scores, _ = self._responsibilities(x)
        u = np.zeros(self.d)
        H = np.zeros((self.d, self.d))
        for rk, g, P in zip(r, scores, self.precisions):
            u += rk * g
            H += rk * (np.outer(g, g) - P)
        return H - np.outer(u, u)

    def hessian_partial(self, x, i: int) -> np.ndarray:
        x = self._check_point(x)
        self._check_index(i)
        r, scores, _ = self._responsibilities(x)
        u = np.zeros(self.d)
        for rk, g in zip(r, scores):
            u += rk * g
        H = self.hessian(x)
        hi = H[:, i]
        out = -np.outer(hi, u) - np.outer(u, hi)
        for rk, g, P in zip(r, scores, self.precisions):
            dg = -P[:, i]                       # d g_k / d x_i
            drk = rk * (g[i] - u[i])            # d r_k / d x_i
            out += drk * (np.outer(g, g) - P)
            out += rk * (np.outer(dg, g) + np.outer(g, dg))
        return out


# ---------------------------------------------------------------------------
# Finite-difference oracle (used only by tests and the validation suite)

def fd_step(xi: float) -> float:
    # balances truncation and round-off at double precision
    return 1e-5 * max(1.0, abs(xi))


def fd_partial(f, x, i: int, h: float | None = None):
    """Central-difference derivative of f (any array output) w.r.t. x_i."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = fd_step(x[i])
    xp = x.copy()
    xp[i] += h
    xm = x.copy()
    xm[i] -= h
    return (np.asarray(f(xp), dtype=float) - np.asarray(f(xm), dtype=float)) / (2.0 * h)


def fd_oracle(f, x, h: float | None = None):
    """Central-difference derivative tensor of f at x.

    For scalar x returns the scalar derivative; for a d-vector x the
    partials are stacked along the last axis, so a scalar f yields the
    gradient and a matrix-valued f yields a (d, d, d) tensor whose last
    index is the differentiation direction.
    """
    x_arr = np.asarray(x, dtype=float)
    if x_arr.ndim == 0:
        step = h if h is not None else fd_step(float(x_arr))
        return (float(f(float(x_arr) + step)) - float(f(float(x_arr) - step))) / (2.0 * step)
    parts = [fd_partial(f, x_arr, i, h) for i in range(x_arr.shape[0])]
    return np.stack(parts, axis=-1)


def fd_gradient(f, x):
    return fd_oracle(f, x)


def fd_hessian(f, x):
    return fd_oracle(lambda y: fd_gradient(f, y), x)


def make_target(name: str, **kwargs) -> TargetModel:
    """Instantiate a target by config name."""
    if name == "banana":
        return BananaTarget(**kwargs)
    if name == "gaussian":
        return AnisotropicGaussianTarget(**kwargs)
    if name == "mixture":
        return GaussianMixtureTarget(**kwargs)
    raise ContractViolation(f"unknown target '{name}'")
