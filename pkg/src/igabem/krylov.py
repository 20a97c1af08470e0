"""Preconditioned conjugate gradients with Lanczos spectrum estimates.

The CG coefficients define a Lanczos tridiagonal whose eigenvalues
approximate the spectrum of the preconditioned operator; its extreme
eigenvalues give the condition-number estimate reported alongside the
solve.  `exact_cond` computes the exact extreme eigenvalues of M^{-1}A by
Cholesky symmetrization for cross-checks at moderate size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class BreakdownError(RuntimeError):
    """p^T A p <= 0: the operator or preconditioner is not SPD."""


@dataclass
class SolveReport:
    x: np.ndarray
    n_iter: int
    residuals: list[float] = field(repr=False)
    alphas: list[float] = field(repr=False)
    betas: list[float] = field(repr=False)
    converged: bool = True
    iterates: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def lanczos_matrix(self) -> np.ndarray:
        m = len(self.alphas)
        T = np.zeros((m, m))
        for k in range(m):
            T[k, k] = 1.0 / self.alphas[k]
            if k > 0:
                T[k, k] += self.betas[k - 1] / self.alphas[k - 1]
                off = np.sqrt(self.betas[k - 1]) / self.alphas[k - 1]
                T[k, k - 1] = T[k - 1, k] = off
        return T

    def cond_estimate(self) -> tuple[float, float, float]:
        """(lambda_min, lambda_max, cond) of the preconditioned operator."""
        if not self.alphas:
            return 1.0, 1.0, 1.0
        ev = scipy.linalg.eigvalsh_tridiagonal(
            np.diag(self.lanczos_matrix),
            np.diag(self.lanczos_matrix, 1) if len(self.alphas) > 1 else np.array([]),
        )
        lo, hi = float(ev[0]), float(ev[-1])
        return lo, hi, hi / lo


def pcg(apply_A, apply_M, b: np.ndarray, tol: float = 1e-8,
        max_iter: int = 2000, keep_iterates: bool = False) -> SolveReport:
    """Solve A x = b from x0 = 0; stops when the preconditioned residual norm
    sqrt(<z, r>) drops below tol times its initial value."""
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side contains non-finite entries")
    x = np.zeros_like(b)
    r = b.copy()
    z = apply_M(r)
    rho = float(z @ r)
    if rho < 0:
        raise BreakdownError("preconditioner is not positive definite")
    norm0 = np.sqrt(rho)
    residuals = [1.0]
    alphas: list[float] = []
    betas: list[float] = []
    iterates = [x.copy()] if keep_iterates else None
    if norm0 == 0.0:
        return SolveReport(x, 0, residuals, alphas, betas, iterates=iterates)
    p = z.copy()
    for it in range(1, max_iter + 1):
        Ap = apply_A(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise BreakdownError(f"p^T A p = {pAp} at iteration {it}")
        alpha = rho / pAp
        x += alpha * p
        r -= alpha * Ap
        z = apply_M(r)
        rho_new = float(z @ r)
        if rho_new < 0:
            raise BreakdownError("preconditioner is not positive definite")
        alphas.append(alpha)
        betas.append(rho_new / rho)
        residuals.append(float(np.sqrt(rho_new) / norm0))
        if keep_iterates:
            iterates.append(x.copy())
        if residuals[-1] <= tol:
            return SolveReport(x, it, residuals, alphas, betas, iterates=iterates)
        p = z + betas[-1] * p
        rho = rho_new
    return SolveReport(x, max_iter, residuals, alphas, betas, converged=False,
                       iterates=iterates)


def exact_cond(A: np.ndarray, M: np.ndarray) -> tuple[float, float]:
    """Extreme eigenvalues of M A (M symmetric, A SPD) via L^T M L, A = L L^T."""
    L = np.linalg.cholesky(A)
    ev = np.linalg.eigvalsh(L.T @ M @ L)
    return float(ev[0]), float(ev[-1])
