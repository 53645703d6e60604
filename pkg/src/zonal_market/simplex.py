"""Dense two-phase revised simplex with exact basic duals.

Solves ``min c^T x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0`` for the
small dense problems produced by market clearing (a few hundred columns at
most). The basis inverse is kept explicitly and updated by elementary row
operations, with a periodic refactorization.

Pricing defaults to Bland's rule, which cannot cycle. ``pricing="dantzig"``
picks the most negative reduced cost and falls back to Bland's rule after a
run of degenerate pivots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, UnboundedError

_REFACTOR_EVERY = 40
_PIVOT_TOL = 1e-9
_DEGENERATE_RUN = 10


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    ineq_duals: np.ndarray  # >= 0, one per A_ub row
    eq_duals: np.ndarray  # free, one per A_eq row
    reduced_costs: np.ndarray  # c - A_eq^T y + A_ub^T ineq_duals, >= 0 at optimum
    iterations: int


class _Tableau:
    """Basis bookkeeping for ``M v = b, v >= 0``."""

    def __init__(self, M, b, basis):
        self.M = M
        self.b = b
        self.basis = list(basis)
        self.refactor()

    def refactor(self):
        self.Binv = np.linalg.inv(self.M[:, self.basis])
        self.xB = self.Binv @ self.b
        self.xB[np.abs(self.xB) < 1e-13] = 0.0
        self.since_refactor = 0

    def pivot(self, row: int, col: int, d: np.ndarray):
        piv = d[row]
        self.Binv[row] /= piv
        theta = self.xB[row] / piv
        others = np.arange(len(d)) != row
        self.Binv[others] -= np.outer(d[others], self.Binv[row])
        self.xB[others] -= theta * d[others]
        self.xB[row] = theta
        self.basis[row] = col
        self.since_refactor += 1
        if self.since_refactor >= _REFACTOR_EVERY:
            self.refactor()

    def run(self, cost, allowed, tol, max_iter, pricing) -> int:
        """Iterate to optimality of ``cost``; returns the iteration count."""
        degenerate = 0
        for it in range(max_iter):
            y = cost[self.basis] @ self.Binv
            r = cost - y @ self.M
            r[self.basis] = 0.0
            cand = np.flatnonzero(allowed & (r < -tol))
            if cand.size == 0:
                return it
            if pricing == "bland" or degenerate >= _DEGENERATE_RUN:
                q = int(cand[0])
            else:
                q = int(cand[np.argmin(r[cand])])
            d = self.Binv @ self.M[:, q]
            pos = np.flatnonzero(d > _PIVOT_TOL)
            if pos.size == 0:
                raise UnboundedError("LP is unbounded")
            ratios = np.maximum(self.xB[pos], 0.0) / d[pos]
            best = ratios.min()
            ties = pos[ratios <= best + 1e-12]
            # Bland's leaving rule: smallest basic variable index among ties.
            row = int(min(ties, key=lambda i: self.basis[i]))
            degenerate = degenerate + 1 if best <= 1e-12 else 0
            self.pivot(row, q, d)
        raise RuntimeError(f"simplex did not terminate in {max_iter} iterations")


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, *, tol: float = 1e-9,
             feas_tol: float = 1e-9, max_iter: int | None = None,
             pricing: str = "bland") -> LpSolution:
    """Solve a small dense LP with nonnegative variables.

    Raises InfeasibleError or UnboundedError. Inputs should be reasonably
    scaled (entries of order one); tolerances are absolute.
    """
    if pricing not in ("bland", "dantzig"):
        raise ValueError(f"unknown pricing rule {pricing!r}")
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq
    if m == 0:
        if np.any(c < -tol):
            raise UnboundedError("LP is unbounded")
        return LpSolution(np.zeros(n), 0.0, np.zeros(0), np.zeros(0), c.copy(), 0)

    # Columns: structural | slacks (ub rows) | artificials (rows needing one).
    b = np.concatenate([b_ub, b_eq])
    need_art = np.concatenate([b_ub < 0, np.ones(m_eq, dtype=bool)])
    art_rows = np.flatnonzero(need_art)
    n_art = art_rows.size
    M = np.zeros((m, n + m_ub + n_art))
    M[:m_ub, :n] = A_ub
    M[m_ub:, :n] = A_eq
    M[np.arange(m_ub), n + np.arange(m_ub)] = 1.0
    art_cols = n + m_ub + np.arange(n_art)
    M[art_rows, art_cols] = np.where(b[art_rows] < 0, -1.0, 1.0)

    basis = np.empty(m, dtype=int)
    basis[:m_ub] = n + np.arange(m_ub)
    basis[art_rows] = art_cols
    if max_iter is None:
        max_iter = 50 * (m + n) + 100
    is_art = np.zeros(M.shape[1], dtype=bool)
    is_art[art_cols] = True
    rows = np.arange(m)  # original row index of each current row
    iterations = 0

    tab = _Tableau(M, b, basis)
    if n_art:
        cost1 = is_art.astype(float)
        iterations += tab.run(cost1, np.ones(M.shape[1], dtype=bool), tol, max_iter, pricing)
        infeas = float(cost1[tab.basis] @ tab.xB)
        if infeas > feas_tol * max(1.0, np.abs(b).max()):
            raise InfeasibleError(f"LP infeasible (phase-1 residual {infeas:.3g})")
        tab, rows = _drive_out_artificials(tab, is_art, rows)

    cost2 = np.zeros(tab.M.shape[1])
    cost2[:n] = c
    iterations += tab.run(cost2, ~is_art, tol, max_iter, pricing)

    v = np.zeros(tab.M.shape[1])
    v[tab.basis] = np.maximum(tab.xB, 0.0)
    x = v[:n]
    y = np.zeros(m)
    y[rows] = cost2[tab.basis] @ tab.Binv
    ineq = np.maximum(-y[:m_ub], 0.0)
    reduced = c - y[:m_ub] @ A_ub - y[m_ub:] @ A_eq
    return LpSolution(x, float(c @ x), ineq, y[m_ub:].copy(), reduced, iterations)


def _drive_out_artificials(tab: _Tableau, is_art, rows):
    """Pivot zero-valued artificials out of the basis; drop redundant rows."""
    while True:
        basic_art = [i for i, j in enumerate(tab.basis) if is_art[j]]
        if not basic_art:
            return tab, rows
        i = basic_art[0]
        row = tab.Binv[i] @ tab.M
        row[is_art] = 0.0
        row[tab.basis] = 0.0
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) > 1e-7:
            tab.pivot(i, j, tab.Binv @ tab.M[:, j])
            continue
        # Row i of B^-1 combines dependent rows; remove one of them.
        w = tab.Binv[i]
        r = int(np.argmax(np.abs(w)))
        keep = np.arange(tab.M.shape[0]) != r
        basis = [j for k, j in enumerate(tab.basis) if k != i]
        tab = _Tableau(tab.M[keep], tab.b[keep], basis)
        rows = rows[keep]
