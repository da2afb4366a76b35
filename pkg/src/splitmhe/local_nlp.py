"""Per-sub-window solves, optimality residuals, and parametric sensitivities.

The augmented sub-problem treated here is

    min over X   0.5 * ||b(X)||^2 + lam' A X + (rho/2) * ||X - Y||^2
    s.t.         F(X) = 0

where ``b`` stacks the sub-window's weighted residuals and ``F`` its dynamics
defects. ``(Y, lam)`` act as parameters: the prox center and the coupling
price. The solver is an equality-constrained SQP over this objective; the
tangent predictor continues a solved ``(X, mu)`` pair to nearby parameter
values through the Jacobians of the first-order conditions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import LocalSolveError, OriginSingularityError, SingularKktError
from .problem import (
    SubProblem,
    constraint_vector,
    eval_constraints,
    eval_residual_stack,
    residual_vector,
)

logger = logging.getLogger(__name__)

Array = np.ndarray

_MIN_STEP_FRACTION = 2.0 ** -30


@dataclass
class LocalSolveConfig:
    """Tolerances and safeguards of the inner sub-problem solver.

    ``eps_h`` seeds the escalation ladder applied when an inner KKT
    factorization fails; it defaults to the proximal weight ``rho``.
    """

    inner_tol: float = 1e-10
    inner_max_iter: int = 50
    eps_h: float | None = None
    hessian_mode: str = "exact_lagrangian"
    full_step_tol: float = 1e-3

    def __post_init__(self):
        if self.inner_tol <= 0 or self.inner_max_iter < 1:
            raise ValueError("inner tolerances must be positive")
        if self.hessian_mode not in ("gauss_newton", "exact_lagrangian"):
            raise ValueError(f"unknown hessian mode {self.hessian_mode!r}")


@dataclass(eq=False)
class LocalSolveResult:
    """Solution of one augmented sub-problem (best iterate when not converged)."""

    x: Array
    mu: Array
    iterations: int
    converged: bool
    kkt_inf: float


@dataclass(eq=False)
class SensitivityPair:
    """Jacobians of the sub-problem first-order conditions.

    ``M`` differentiates the stacked conditions with respect to the solution
    pair ``(X, mu)``; ``N`` with respect to the parameters ``(Y, lam)``. ``M``
    is the symmetric KKT matrix with exact Lagrangian curvature; ``N`` has the
    fixed sparsity ``[[-rho*I, A'], [0, 0]]``.
    """

    M: Array
    N: Array


def first_order_conditions(
    sub: SubProblem, x: Array, mu: Array, lam: Array, y_ref: Array, rho: float
) -> Array:
    """Stacked first-order conditions of the augmented sub-problem.

    Rows: the augmented-Lagrangian gradient (objective gradient plus coupling
    price, proximal pull, and constraint terms), then the dynamics defects.
    Affine in the parameters ``(y_ref, lam)``.
    """
    b, J = eval_residual_stack(sub, x)
    F, C = eval_constraints(sub, x)
    grad = J.T @ b + sub.apply_coupling_transpose(lam) + rho * (np.asarray(x, dtype=float) - y_ref)
    grad = grad + C.T @ mu
    return np.concatenate([grad, F])


def kkt_residual(sub: SubProblem, x: Array, mu: Array, lam: Array, y_ref: Array, rho: float) -> float:
    """Infinity norm of the augmented-Lagrangian gradient and the dynamics defects."""
    return float(np.abs(first_order_conditions(sub, x, mu, lam, y_ref, rho)).max())


def lagrangian_hessian(sub: SubProblem, x: Array, mu: Array, rho: float, mode: str = "exact_lagrangian") -> Array:
    """Curvature of the local Lagrangian plus the proximal shift ``rho * I``.

    ``gauss_newton`` keeps only ``J'J + rho*I``; ``exact_lagrangian`` adds the
    residual curvature (weighted observation Hessians) and the constraint
    curvature (dynamics Hessians contracted with ``mu``). Always symmetric.
    """
    b, J = eval_residual_stack(sub, x)
    n = sub.block_dim
    H = J.T @ J + rho * np.eye(n)
    if mode == "gauss_newton":
        return H
    if mode != "exact_lagrangian":
        raise ValueError(f"unknown hessian mode {mode!r}")
    m = sub.model
    states = sub.states(x)
    row = m.nx if sub.has_prior else 0
    for k, off in enumerate(sub.meas_offsets):
        w = sub.v_inv_sqrt.T @ b[row:row + m.ny]
        cols = slice(off * m.nx, (off + 1) * m.nx)
        H[cols, cols] += m.d2h(states[off], w)
        row += m.ny
    for k in range(sub.length):
        w = mu[k * m.nx:(k + 1) * m.nx]
        cols = slice(k * m.nx, (k + 1) * m.nx)
        H[cols, cols] -= m.d2f(states[k], sub.controls[k], w)
    return 0.5 * (H + H.T)


def sensitivity_matrices(
    sub: SubProblem, x: Array, mu: Array, lam: Array, y_ref: Array, rho: float
) -> SensitivityPair:
    """Build ``M`` and ``N`` at a solved ``(x, mu)`` pair.

    The parameters enter the conditions linearly, so ``N`` is constant and
    ``M`` depends on the solution point only; ``lam`` and ``y_ref`` document
    the evaluation point.
    """
    _, C = eval_constraints(sub, x)
    W = lagrangian_hessian(sub, x, mu, rho, "exact_lagrangian")
    n = sub.block_dim
    m_rows = sub.constraint_dim
    r = sub.partition.r
    M = np.zeros((n + m_rows, n + m_rows))
    M[:n, :n] = W
    M[:n, n:] = C.T
    M[n:, :n] = C
    N = np.zeros((n + m_rows, n + r))
    N[:n, :n] = -rho * np.eye(n)
    N[:n, n:] = sub.coupling_matrix().T
    return SensitivityPair(M=M, N=N)


def tangent_predictor(s: Array, xi_old: Array, xi_new: Array, pair: SensitivityPair) -> Array:
    """First-order continuation of a parametric KKT solution.

    ``s`` stacks ``(X, mu)`` solved at parameters ``xi_old``; the return value
    predicts the solution at ``xi_new``, exactly on affine solution manifolds
    and to second order otherwise.
    """
    s = np.asarray(s, dtype=float)
    delta = np.asarray(xi_new, dtype=float) - np.asarray(xi_old, dtype=float)
    try:
        step = np.linalg.solve(pair.M, pair.N @ delta)
    except np.linalg.LinAlgError as exc:
        raise SingularKktError("sensitivity KKT matrix is singular") from exc
    return s - step


def _merit(sub: SubProblem, x: Array, sigma: float, at_lam: Array, y_ref: Array, rho: float) -> float:
    b = residual_vector(sub, x)
    F = constraint_vector(sub, x)
    dx = x - y_ref
    return float(0.5 * b @ b + at_lam @ x + 0.5 * rho * dx @ dx + sigma * np.abs(F).sum())


def _solve_inner_kkt(H: Array, C: Array, grad: Array, F: Array, eps0: float) -> tuple[Array, Array]:
    n = H.shape[0]
    m = C.shape[0]
    rhs = np.concatenate([-grad, -F])
    shift = 0.0
    for attempt in range(4):
        K = np.zeros((n + m, n + m))
        K[:n, :n] = H + shift * np.eye(n)
        K[:n, n:] = C.T
        K[n:, :n] = C
        try:
            sol = np.linalg.solve(K, rhs)
            return sol[:n], sol[n:]
        except np.linalg.LinAlgError:
            shift = eps0 * 10.0 ** attempt
            logger.warning("inner KKT factorization failed; retrying with shift %.3e", shift)
    raise LocalSolveError("inner KKT system remained singular after regularization")


def _line_search(sub, x, dx, sigma, at_lam, y_ref, rho, merit0, slack):
    """Halve the step until the l1 merit decreases; returns the best trial."""
    alpha = 1.0
    best_x, best_merit = None, merit0
    while alpha >= _MIN_STEP_FRACTION:
        trial = x + alpha * dx
        try:
            trial_merit = _merit(sub, trial, sigma, at_lam, y_ref, rho)
        except OriginSingularityError:
            alpha *= 0.5
            continue
        if trial_merit < merit0 - slack:
            return trial, trial_merit
        if trial_merit < best_merit:
            best_x, best_merit = trial, trial_merit
        alpha *= 0.5
    return best_x, best_merit


def solve_local_subproblem(
    sub: SubProblem,
    lam: Array,
    y_ref: Array,
    rho: float,
    cfg: LocalSolveConfig | None = None,
    x0: Array | None = None,
) -> LocalSolveResult:
    """Solve one augmented sub-problem to its first-order conditions.

    Equality-constrained SQP: at each iterate the KKT system
    ``[[W, C'], [C, 0]]`` is solved for the full step, with ``W`` the exact
    Lagrangian curvature plus ``rho*I`` by default (Gauss-Newton's dropped
    curvature stalls on the coupling-tilted blocks, where the residual stays
    large at the solution). Steps are halved until an l1-penalized merit
    decreases; when the curvature step finds no descent the iteration retries
    with the Gauss-Newton matrix ``J'J + rho*I``. Below ``full_step_tol`` the
    full step is taken outright: merit differences there are at float
    resolution and the SQP contraction stands on its own. The iteration count
    reports the number of KKT solves taken.
    """
    cfg = cfg or LocalSolveConfig()
    if rho <= 0:
        raise ValueError("proximal weight rho must be positive")
    y_ref = np.asarray(y_ref, dtype=float)
    x = np.array(y_ref if x0 is None else x0, dtype=float)
    mu = np.zeros(sub.constraint_dim)
    at_lam = sub.apply_coupling_transpose(lam)
    eps0 = cfg.eps_h if cfg.eps_h is not None else rho

    steps = 0
    kkt = np.inf
    for _ in range(cfg.inner_max_iter):
        b, J = eval_residual_stack(sub, x)
        F, C = eval_constraints(sub, x)
        grad = J.T @ b + at_lam + rho * (x - y_ref)
        kkt = float(np.abs(grad + C.T @ mu).max())
        if F.size:
            kkt = max(kkt, float(np.abs(F).max()))
        if kkt <= cfg.inner_tol:
            return LocalSolveResult(x=x, mu=mu, iterations=steps, converged=True, kkt_inf=kkt)

        if cfg.hessian_mode == "exact_lagrangian":
            H = lagrangian_hessian(sub, x, mu, rho, "exact_lagrangian")
        else:
            H = J.T @ J + rho * np.eye(sub.block_dim)
        dx, mu_new = _solve_inner_kkt(H, C, grad, F, eps0)

        if kkt <= cfg.full_step_tol:
            x = x + dx
        else:
            sigma = 1.0 + 2.0 * float(np.abs(mu_new).max()) if mu_new.size else 1.0
            merit0 = _merit(sub, x, sigma, at_lam, y_ref, rho)
            slack = 1e-14 * max(1.0, abs(merit0))
            trial, _ = _line_search(sub, x, dx, sigma, at_lam, y_ref, rho, merit0, slack)
            if trial is None and cfg.hessian_mode == "exact_lagrangian":
                # indefinite curvature can make the Newton step an ascent
                # direction far from the solution; retry with Gauss-Newton
                H = J.T @ J + rho * np.eye(sub.block_dim)
                dx, mu_new = _solve_inner_kkt(H, C, grad, F, eps0)
                trial, _ = _line_search(sub, x, dx, sigma, at_lam, y_ref, rho, merit0, slack)
            if trial is not None:
                x = trial
        mu = mu_new
        steps += 1

    return LocalSolveResult(x=x, mu=mu, iterations=steps, converged=False, kkt_inf=kkt)
