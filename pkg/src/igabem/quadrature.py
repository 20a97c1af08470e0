"""Quadrature rules on the unit interval.

Provides Gauss-Legendre rules, Gauss-Lobatto rules, and a Gaussian rule for
the weight log(1/x) on (0,1).  The log-weighted nodes are obtained once per
order from the three-term recurrence of the orthogonal polynomials for that
weight (modified Chebyshev algorithm on shifted-Legendre moments, evaluated
in extended precision) and cached.
"""

from functools import lru_cache

import mpmath as mp
import numpy as np


@lru_cache(maxsize=None)
def gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    if n < 1:
        raise ValueError(f"need at least one node, got n={n}")
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=None)
def lobatto01(n: int) -> np.ndarray:
    """Gauss-Lobatto nodes on [0, 1] (endpoints included), n >= 2."""
    if n < 2:
        raise ValueError(f"Lobatto rule needs n>=2, got {n}")
    if n == 2:
        return np.array([0.0, 1.0])
    # interior nodes are the roots of P'_{n-1}
    coeffs = np.zeros(n)
    coeffs[-1] = 1.0
    interior = np.polynomial.legendre.Legendre(coeffs).deriv().roots()
    return np.concatenate(([0.0], (np.real(interior) + 1.0) / 2.0, [1.0]))


@lru_cache(maxsize=None)
def gauss_log01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian rule for integrals of the form int_0^1 f(x) log(1/x) dx.

    Returns nodes and positive weights with sum(w) = 1 (the weight's mass).
    """
    if n < 1:
        raise ValueError(f"need at least one node, got n={n}")
    with mp.workdps(40 + 3 * n):
        alpha, beta = _log_weight_recurrence(n)
        # Golub-Welsch: eigenvalues of the Jacobi matrix are the nodes,
        # squared first components of normalized eigenvectors the weights.
        jac = mp.zeros(n, n)
        for k in range(n):
            jac[k, k] = alpha[k]
        for k in range(n - 1):
            off = mp.sqrt(beta[k + 1])
            jac[k, k + 1] = off
            jac[k + 1, k] = off
        eigvals, eigvecs = mp.eigsy(jac)
        nodes = np.array([float(eigvals[k]) for k in range(n)])
        weights = np.array([float(beta[0] * eigvecs[0, k] ** 2) for k in range(n)])
    order = np.argsort(nodes)
    return nodes[order], weights[order]


def _log_weight_recurrence(n: int):
    """Recurrence coefficients (alpha_k, beta_k), k<n, for weight log(1/x) on (0,1).

    Uses the modified Chebyshev algorithm with shifted-Legendre modified
    moments, which are known in closed form:
        m_0 = 1,  m_k = (-1)^k / (k (k+1))  for k >= 1.
    """
    m = 2 * n
    # monic shifted-Legendre recurrence: pi_{k+1} = (x - a_k) pi_k - b_k pi_{k-1}
    a = [mp.mpf(1) / 2] * m
    b = [mp.mpf(0)] + [mp.mpf(k * k) / (4 * (4 * k * k - 1)) for k in range(1, m)]
    # int_0^1 P~_k log(1/x) = (-1)^k/(k(k+1)); rescale to monic, leading
    # coefficient of the shifted Legendre P~_k is binom(2k, k)
    mom = [mp.mpf(1)] + [
        mp.mpf((-1) ** k) / (k * (k + 1)) / mp.binomial(2 * k, k) for k in range(1, m)
    ]

    sigma_prev = [mp.mpf(0)] * (m + 1)
    sigma = list(mom) + [mp.mpf(0)]
    alpha = [a[0] + mom[1] / mom[0]]
    beta = [mom[0]]
    for k in range(1, n):
        sigma_next = [mp.mpf(0)] * (m + 1)
        for ell in range(k, 2 * n - k):
            sigma_next[ell] = (
                sigma[ell + 1]
                - (alpha[k - 1] - a[ell]) * sigma[ell]
                - beta[k - 1] * sigma_prev[ell]
                + b[ell] * sigma[ell - 1]
            )
        alpha.append(a[k] + sigma_next[k + 1] / sigma_next[k] - sigma[k] / sigma[k - 1])
        beta.append(sigma_next[k] / sigma[k - 1])
        sigma_prev, sigma = sigma, sigma_next
    return alpha, beta
