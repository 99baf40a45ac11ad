"""SoftAbs metric built from the log-density Hessian.

The metric is G = Q f(D) Q^T where H = Q D Q^T is the eigendecomposition of
the Hessian and f(lam) = lam * coth(hardness * lam) softens each eigenvalue
into a strictly positive value >= max(|lam|, 1/hardness).  Coordinate
derivatives of G follow the Daleckii-Krein form: dG_i = Q (J o M_i) Q^T with
M_i = Q^T (dH_i) Q and J the divided-difference table of f on the eigenvalue
pairs.  Christoffel symbols and the contracted quantities used by the flow
and event rates are assembled from those partials.

Everything here is pure and the returned containers are treated as
immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

# Branch thresholds for the divided-difference table: the equal-eigenvalue
# branch is a removable limit, so a hard switch keeps the quotient stable.
EQUAL_EIG_RTOL = 1e-8
ZERO_EIG_TOL = 1e-10

DEFAULT_HARDNESS = 1e3


def softabs_scalar(lam: float, hardness: float) -> float:
    """Softened absolute value f(lam) = lam * coth(hardness * lam).

    Total and even in lam; f(0) = 1/hardness and f(lam) >= max(|lam|, 1/hardness).
    """
    u = hardness * lam
    if abs(u) < 1e-8:
        # series of u*coth(u)/hardness around 0
        return (1.0 + u * u / 3.0) / hardness
    return lam / math.tanh(u)


def _softabs_derivative(lam: float, hardness: float) -> float:
    """f'(lam) = coth(u) - u / sinh(u)^2 with u = hardness * lam."""
    u = hardness * lam
    if abs(u) < 1e-5:
        # odd series: f'(lam) = (2/3) u - (4/45) u^3 + O(u^5), in lam units
        return (2.0 / 3.0) * u - (4.0 / 45.0) * u ** 3
    if abs(u) > 20.0:
        # u/sinh^2(u) < 4e-16 here; coth(u) = sign(u) to double precision
        return math.copysign(1.0, u)
    return 1.0 / math.tanh(u) - u / math.sinh(u) ** 2


@dataclass(frozen=True)
class MetricState:
    """SoftAbs metric at a point: factors, inverse, and log-determinant.

    `sample_factor` is L with L L^T = G^{-1}, suitable for drawing
    Normal(0, G^{-1}) variates as L @ z.
    """

    hardness: float
    eigvecs: np.ndarray        # Q, orthogonal (d, d)
    eigs: np.ndarray           # raw Hessian eigenvalues (d,)
    soft_eigs: np.ndarray      # f(eigs), all > 0
    G: np.ndarray
    G_inv: np.ndarray
    sample_factor: np.ndarray
    log_det: float
    x: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.eigs.shape[0]


@dataclass(frozen=True)
class MetricDerivatives:
    """Coordinate derivatives of the metric and their contractions.

    gamma[a, b, c] are the Christoffel symbols (symmetric in b, c);
    trace_gamma[j] = sum_i gamma[i, i, j]; grad_half_logdet is the gradient
    of (1/2) log det G.  The last two are equal by Jacobi's formula and the
    pair is kept as a cross-check.
    """

    partials: np.ndarray          # (d, d, d), partials[k] = dG/dx_k
    gamma: np.ndarray             # (d, d, d)
    trace_gamma: np.ndarray       # (d,)
    grad_half_logdet: np.ndarray  # (d,)


def build_metric(H, hardness: float = DEFAULT_HARDNESS, x=None) -> MetricState:
    """SoftAbs metric from a symmetric matrix H."""
    H = np.asarray(H, dtype=float)
    try:
        eigs, Q = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    soft = np.array([softabs_scalar(l, hardness) for l in eigs])
    G = (Q * soft) @ Q.T
    G = 0.5 * (G + G.T)
    G_inv = (Q / soft) @ Q.T
    G_inv = 0.5 * (G_inv + G_inv.T)
    factor = Q / np.sqrt(soft)
    log_det = float(np.sum(np.log(soft)))
    return MetricState(
        hardness=float(hardness), eigvecs=Q, eigs=eigs, soft_eigs=soft,
        G=G, G_inv=G_inv, sample_factor=factor, log_det=log_det,
        x=None if x is None else np.asarray(x, dtype=float),
    )


def divided_differences(eigs, hardness: float) -> np.ndarray:
    """Divided-difference table of the softening function on eigenvalue pairs.

    Entry (i, j) is (f(l_i) - f(l_j)) / (l_i - l_j), with the diagonal and
    near-equal pairs taking the derivative limit f'(l_i), and exactly-zero
    eigenvalue pairs taking 0 (f is even, so f'(0) = 0).
    """
    eigs = np.asarray(eigs, dtype=float)
    d = eigs.shape[0]
    f = np.array([softabs_scalar(l, hardness) for l in eigs])
    J = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            li, lj = eigs[i], eigs[j]
            scale = max(1.0, abs(li), abs(lj))
            if abs(li - lj) < EQUAL_EIG_RTOL * scale:
                if abs(li) < ZERO_EIG_TOL and abs(lj) < ZERO_EIG_TOL:
                    J[i, j] = 0.0
                else:
                    J[i, j] = _softabs_derivative(0.5 * (li + lj), hardness)
            else:
                J[i, j] = (f[i] - f[j]) / (li - lj)
    return J


def metric_partial(state: MetricState, J: np.ndarray, dH_i) -> np.ndarray:
    """dG in the coordinate direction whose Hessian derivative is dH_i."""
    Q = state.eigvecs
    M = Q.T @ np.asarray(dH_i, dtype=float) @ Q
    out = Q @ (J * M) @ Q.T
    return 0.5 * (out + out.T)


def directional_metric_derivative(partials, v) -> np.ndarray:
    """dG/dv = sum_k v_k dG_k; linear in v."""
    partials = np.asarray(partials, dtype=float)
    v = np.asarray(v, dtype=float)
    return np.einsum("k,kij->ij", v, partials)


def christoffel_symbols(state: MetricState, partials) -> MetricDerivatives:
    """Christoffel symbols and contracted quantities from the metric partials.

    gamma[a, b, c] = (1/2) G^{ad} (dG_b[c, d] + dG_c[b, d] - dG_d[b, c]).
    """
    P = np.asarray(partials, dtype=float)          # P[k, i, j] = dG_k[i, j]
    A = P + np.transpose(P, (2, 0, 1)) - np.transpose(P, (1, 2, 0))
    # A[b, c, d] = dG_b[c, d] + dG_c[b, d] - dG_d[b, c]
    gamma = 0.5 * np.einsum("ad,bcd->abc", state.G_inv, A)
    gamma = 0.5 * (gamma + np.transpose(gamma, (0, 2, 1)))
    trace_gamma = np.einsum("aaj->j", gamma)
    grad_half_logdet = 0.5 * np.einsum("ij,kij->k", state.G_inv, P)
    return MetricDerivatives(
        partials=P, gamma=gamma, trace_gamma=trace_gamma,
        grad_half_logdet=grad_half_logdet,
    )


def metric_partials_from_hessian(state: MetricState, hessian_partials) -> np.ndarray:
    """Stack of dG_k for all coordinates, from the Hessian partial stack."""
    J = divided_differences(state.eigs, state.hardness)
    return np.stack([metric_partial(state, J, dH) for dH in hessian_partials])
