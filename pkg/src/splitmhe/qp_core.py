"""Closed-form solver for block-coupled equality-constrained QPs.

The problem solved here is

    min over {dX_i}   sum_i  0.5 * dX_i' H_i dX_i + g_i' dX_i
    s.t.              C_i dX_i + d_i = 0                (multipliers mu_i)
                      sum_i A_i (X_i^+ + dX_i) = 0      (multiplier lambda)

with every ``H_i`` positive definite and every ``C_i`` full row rank. Blocks
are eliminated through cached Cholesky factors, leaving a dense ``r x r``
Schur system in the shared multiplier:

    G_i = A_i H_i^-1 A_i',  Q_i = A_i H_i^-1 C_i',  R_i = C_i H_i^-1 C_i'
    S   = sum_i (G_i - Q_i R_i^-1 Q_i')
    S lambda = sum_i s_i,   with per-block right-hand contributions s_i
    mu_i = -R_i^-1 (C_i H_i^-1 g_i + Q_i' lambda - d_i)
    dX_i = -H_i^-1 (g_i + C_i' mu_i + A_i' lambda)

A dense full-KKT solve over ``(dX, mu, lambda)`` is provided as an independent
verification oracle. This module never regularizes on its own; callers decide
whether and how to shift the block Hessians.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatchError,
    NotPositiveDefiniteError,
    RankDeficientConstraintsError,
    SingularKktError,
    SingularSchurError,
)

logger = logging.getLogger(__name__)

Array = np.ndarray

# beyond this condition estimate the Schur solve is treated as singular
SCHUR_CONDITION_LIMIT = 1e14


@dataclass(eq=False)
class QpBlock:
    """One block of the coupled QP: Hessian, gradient, local constraint rows,
    coupling rows, and the block's anchor contribution ``A_i @ X_i^+``.

    ``d`` holds the constraint offsets; pass zeros for the homogeneous form in
    which the local linearization point is already feasible.
    """

    H: Array
    g: Array
    C: Array
    d: Array
    A: Array
    anchor: Array

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        self.C = np.asarray(self.C, dtype=float).reshape(-1, self.H.shape[0])
        self.d = np.asarray(self.d, dtype=float).reshape(-1)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, self.H.shape[0])
        self.anchor = np.asarray(self.anchor, dtype=float).reshape(-1)
        n = self.H.shape[0]
        if self.H.shape != (n, n) or self.g.shape != (n,):
            raise DimensionMismatchError(f"inconsistent H/g shapes: {self.H.shape}, {self.g.shape}")
        if self.d.shape[0] != self.C.shape[0]:
            raise DimensionMismatchError(f"d has {self.d.shape[0]} rows, C has {self.C.shape[0]}")
        if self.anchor.shape[0] != self.A.shape[0]:
            raise DimensionMismatchError(
                f"anchor has {self.anchor.shape[0]} rows, A has {self.A.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def r(self) -> int:
        return self.A.shape[0]


@dataclass(eq=False)
class SchurTerms:
    """Per-block Schur data plus the cached factorizations used to finish the solve."""

    G: Array
    Q: Array
    R: Array
    s: Array
    anchor: Array
    h_factor: tuple = field(repr=False, default=None)
    r_factor: tuple = field(repr=False, default=None)
    hinv_g: Array = field(repr=False, default=None)
    hinv_Ct: Array = field(repr=False, default=None)
    hinv_At: Array = field(repr=False, default=None)


@dataclass(eq=False)
class QpSolution:
    """Multipliers and block steps of the coupled QP, with solve diagnostics."""

    lam: Array
    mu: list[Array]
    delta_x: list[Array]
    diagnostics: dict


def schur_terms(block: QpBlock, index: int | None = None) -> SchurTerms:
    """Eliminate one block through its Hessian factorization.

    Returns ``G``, ``Q``, ``R`` and the block's additive contribution ``s`` to
    the Schur right-hand side, which folds in the anchor, the gradient term,
    and the constraint-offset term. All applications of ``H^-1`` reuse a single
    Cholesky factorization; no inverse is ever formed.
    """
    where = f"block {index}" if index is not None else "block"
    if not (np.isfinite(block.H).all() and np.isfinite(block.g).all()):
        raise NotPositiveDefiniteError(
            f"{where}: Hessian or gradient contains non-finite entries", block_index=index
        )
    try:
        h_factor = scipy.linalg.cho_factor(block.H, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            f"{where}: Hessian is not positive definite", block_index=index
        ) from exc

    hinv_g = scipy.linalg.cho_solve(h_factor, block.g)
    hinv_At = scipy.linalg.cho_solve(h_factor, block.A.T) if block.r else np.zeros((block.n, 0))
    G = block.A @ hinv_At
    G = 0.5 * (G + G.T)

    if block.m:
        hinv_Ct = scipy.linalg.cho_solve(h_factor, block.C.T)
        Q = block.A @ hinv_Ct
        R = block.C @ hinv_Ct
        R = 0.5 * (R + R.T)
        spectrum = np.linalg.eigvalsh(R)
        if spectrum[0] <= spectrum[-1] * 1e-12:
            raise RankDeficientConstraintsError(
                f"{where}: constraint rows are rank deficient", block_index=index
            )
        try:
            r_factor = scipy.linalg.cho_factor(R, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise RankDeficientConstraintsError(
                f"{where}: constraint rows are rank deficient", block_index=index
            ) from exc
        s = block.anchor - block.A @ hinv_g + Q @ scipy.linalg.cho_solve(
            r_factor, block.C @ hinv_g - block.d
        )
    else:
        hinv_Ct = np.zeros((block.n, 0))
        Q = np.zeros((block.r, 0))
        R = np.zeros((0, 0))
        r_factor = None
        s = block.anchor - block.A @ hinv_g

    return SchurTerms(
        G=G,
        Q=Q,
        R=R,
        s=s,
        anchor=block.anchor.copy(),
        h_factor=h_factor,
        r_factor=r_factor,
        hinv_g=hinv_g,
        hinv_Ct=hinv_Ct,
        hinv_At=hinv_At,
    )


def _solve_schur(S: Array, p: Array) -> tuple[Array, dict]:
    """SPD solve of the Schur system with a one-shot pivoted fallback."""
    S = 0.5 * (S + S.T)
    try:
        lam = scipy.linalg.cho_solve(scipy.linalg.cho_factor(S, lower=True), p)
        return lam, {"schur_factorization": "cholesky"}
    except scipy.linalg.LinAlgError:
        pass
    cond = float(np.linalg.cond(S))
    logger.warning("Schur matrix not SPD; falling back to pivoted solve (cond=%.3e)", cond)
    if not np.isfinite(cond) or cond > SCHUR_CONDITION_LIMIT:
        raise SingularSchurError(
            f"coupling Schur matrix is numerically singular (cond={cond:.3e})"
        )
    try:
        lu = scipy.linalg.lu_factor(S)
        lam = scipy.linalg.lu_solve(lu, p)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSchurError("coupling Schur matrix is singular") from exc
    return lam, {"schur_factorization": "lu", "schur_condition": cond}


def solve_coupled_qp(blocks: list[QpBlock]) -> QpSolution:
    """Closed-form solution of the coupled QP via block elimination.

    The Schur reduction and back-substitution are per-block maps; the only
    shared step is the dense ``r x r`` solve for the coupling multiplier. Block
    contributions are summed in index order so results are reproducible.
    """
    if not blocks:
        raise DimensionMismatchError("need at least one block")
    r = blocks[0].r
    if any(b.r != r for b in blocks):
        raise DimensionMismatchError("all blocks must share the coupling row count")

    terms = [schur_terms(block, index=i) for i, block in enumerate(blocks)]

    S = np.zeros((r, r))
    p = np.zeros(r)
    for t in terms:
        if t.R.shape[0]:
            S += t.G - t.Q @ scipy.linalg.cho_solve(t.r_factor, t.Q.T)
        else:
            S += t.G
        p += t.s

    if r:
        lam, diagnostics = _solve_schur(S, p)
    else:
        lam = np.zeros(0)
        diagnostics = {"schur_factorization": "empty"}

    mu = []
    delta_x = []
    for t, block in zip(terms, blocks):
        if block.m:
            mu_i = -scipy.linalg.cho_solve(
                t.r_factor, block.C @ t.hinv_g + t.Q.T @ lam - block.d
            )
        else:
            mu_i = np.zeros(0)
        mu.append(mu_i)
        delta_x.append(-(t.hinv_g + t.hinv_Ct @ mu_i + t.hinv_At @ lam))

    return QpSolution(lam=lam, mu=mu, delta_x=delta_x, diagnostics=diagnostics)


def dense_kkt_oracle(blocks: list[QpBlock]) -> QpSolution:
    """Assemble and solve the full symmetric KKT system directly.

    Used as an independent cross-check of :func:`solve_coupled_qp`; the two
    agree to roundoff on every well-posed instance.
    """
    if not blocks:
        raise DimensionMismatchError("need at least one block")
    r = blocks[0].r
    if any(b.r != r for b in blocks):
        raise DimensionMismatchError("all blocks must share the coupling row count")

    n_tot = sum(b.n for b in blocks)
    m_tot = sum(b.m for b in blocks)
    dim = n_tot + m_tot + r
    K = np.zeros((dim, dim))
    rhs = np.zeros(dim)

    x_off = 0
    mu_off = n_tot
    for b in blocks:
        xs = slice(x_off, x_off + b.n)
        K[xs, xs] = b.H
        rhs[xs] = -b.g
        if b.m:
            ms = slice(mu_off, mu_off + b.m)
            K[ms, xs] = b.C
            K[xs, ms] = b.C.T
            rhs[ms] = -b.d
        if r:
            ls = slice(n_tot + m_tot, dim)
            K[ls, xs] += b.A
            K[xs, ls] += b.A.T
        x_off += b.n
        mu_off += b.m
    if r:
        rhs[n_tot + m_tot:] = -sum(b.anchor for b in blocks)

    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularKktError("assembled KKT matrix is singular") from exc

    lam = sol[n_tot + m_tot:]
    mu = []
    delta_x = []
    x_off = 0
    mu_off = n_tot
    for b in blocks:
        delta_x.append(sol[x_off:x_off + b.n])
        mu.append(sol[mu_off:mu_off + b.m])
        x_off += b.n
        mu_off += b.m
    return QpSolution(lam=lam, mu=mu, delta_x=delta_x, diagnostics={"method": "dense_kkt"})


def kkt_residual_qp(blocks: list[QpBlock], solution: QpSolution) -> float:
    """Infinity norm of the stacked first-order conditions of the coupled QP."""
    worst = 0.0
    coupling = np.zeros(blocks[0].r)
    for b, dx, mu_i in zip(blocks, solution.delta_x, solution.mu):
        stationarity = b.H @ dx + b.g + b.C.T @ mu_i + b.A.T @ solution.lam
        worst = max(worst, float(np.abs(stationarity).max()))
        if b.m:
            worst = max(worst, float(np.abs(b.C @ dx + b.d).max()))
        coupling += b.anchor + b.A @ dx
    if coupling.size:
        worst = max(worst, float(np.abs(coupling).max()))
    return worst


def random_blocks(
    rng: np.random.Generator,
    n_blocks: int,
    r: int,
    size_range: tuple[int, int] = (4, 12),
    constrained: bool = True,
    with_offsets: bool = True,
) -> list[QpBlock]:
    """Random strongly convex, LICQ-satisfying coupled-QP instances.

    Used by self-checks and verification suites: Hessians are ``M'M + I``,
    constraint row counts stay at most ``n - 2`` (full row rank with
    probability one), and coupling rows are dense Gaussian. The coupling must
    remain independent on the local feasible subspaces, so constraint rows are
    trimmed until the blocks keep at least ``r + 1`` free dimensions in total.
    """
    sizes = [int(rng.integers(size_range[0], size_range[1] + 1)) for _ in range(n_blocks)]
    if sum(sizes) < r + 1:
        raise ValueError(f"{n_blocks} blocks of sizes {sizes} cannot support {r} coupling rows")
    m_rows = [int(rng.integers(0, n - 1)) if constrained else 0 for n in sizes]
    free = sum(n - m for n, m in zip(sizes, m_rows))
    idx = 0
    while free < r + 1:
        if m_rows[idx % n_blocks] > 0:
            m_rows[idx % n_blocks] -= 1
            free += 1
        idx += 1

    blocks = []
    for n, m in zip(sizes, m_rows):
        M = rng.standard_normal((n, n))
        H = M.T @ M + np.eye(n)
        C = rng.standard_normal((m, n))
        d = rng.standard_normal(m) if (with_offsets and m) else np.zeros(m)
        A = rng.standard_normal((r, n))
        anchor = A @ rng.standard_normal(n)
        blocks.append(QpBlock(H=H, g=rng.standard_normal(n), C=C, d=d, A=A, anchor=anchor))
    return blocks
