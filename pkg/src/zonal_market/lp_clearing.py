"""Market-operator clearing LP, Slater check and KKT certification.

Variables are the accepted fractions ``x[n, k, z]`` of every existing bid.
Constraint rows, in order:

* demand (Z):    -sum_{n,k} D_nk x_nkz            <= -D_z
* capacity (B):   sum_z x_nkz                      <= 1
* export (Z):     sum_{n in z} sum_k sum_{z'!=z} D_nk x_nkz' <= E_z
* core (Z):      -sum_{n in z} sum_k D_nk x_nkz    <= -C_z

The upper box ``x <= 1`` is implied by the capacity row and ``x >= 0``, so it
gets no row of its own; the multipliers of ``x >= 0`` are returned as
``bound_duals``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market_core import ClearingResult, MarketInstance, revenues
from .simplex import solve_lp

FACE_TOL = 1e-9


@dataclass(frozen=True)
class LpStandardForm:
    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    bounds: tuple[np.ndarray, np.ndarray]  # lower, upper per column
    var_index: np.ndarray  # (N, K, Z) column of x[n,k,z]; -1 for padding
    capacity_row: np.ndarray  # (N, K) row of each capacity constraint; -1 for padding
    n_zones: int
    shortfall_cols: np.ndarray | None = None  # (2, Z) when elastic

    @property
    def demand_rows(self) -> slice:
        return slice(0, self.n_zones)

    @property
    def export_rows(self) -> slice:
        m = self.A_ub.shape[0]
        return slice(m - 2 * self.n_zones, m - self.n_zones)

    @property
    def core_rows(self) -> slice:
        m = self.A_ub.shape[0]
        return slice(m - self.n_zones, m)

    @property
    def n_rows(self) -> int:
        return self.A_ub.shape[0]


@dataclass(frozen=True)
class FeasibilityVerdict:
    condition_i: tuple[bool, ...]
    condition_ii: tuple[bool, ...]

    @property
    def overall(self) -> bool:
        return all(a or b for a, b in zip(self.condition_i, self.condition_ii))


@dataclass(frozen=True)
class KktResidual:
    stationarity: float
    complementarity: float
    primal: float
    dual: float  # most negative multiplier, reported as a positive magnitude

    def max(self) -> float:
        return max(self.stationarity, self.complementarity, self.primal, self.dual)

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max() <= tol


def check_slater(instance: MarketInstance) -> FeasibilityVerdict:
    """Per-zone check of the two sufficient conditions for a strictly feasible clearing."""
    Z = instance.n_zones
    supply = np.zeros(Z)
    for p in instance.producers:
        supply[p.zone] += p.capacity_max
    D = instance.demand
    E = instance.export_limit
    cond_i, cond_ii = [], []
    for z in range(Z):
        others = [w for w in range(Z) if w != z]
        deficit = D[z] - supply[z]
        surplus = sum(supply[w] - D[w] for w in others)
        cond_i.append(bool(supply[z] > D[z]))
        cond_ii.append(bool(surplus > deficit and deficit <= sum(E[w] for w in others)))
    return FeasibilityVerdict(tuple(cond_i), tuple(cond_ii))


def build_lp(instance: MarketInstance, elastic_penalty: float | None = None) -> LpStandardForm:
    """Assemble the clearing LP for fixed ladders.

    With ``elastic_penalty`` the demand and core rows get shortfall columns
    priced at that penalty per MW, so the LP is always feasible.
    """
    N, K, Z = instance.n_producers, instance.max_len, instance.n_zones
    cap = instance.capacity_matrix()
    price = instance.price_matrix()
    mask = instance.bid_mask()
    zone_of = instance.producer_zone

    var_index = -np.ones((N, K, Z), dtype=int)
    bids = np.argwhere(mask)
    B = len(bids)
    nx = B * Z
    for b, (n, k) in enumerate(bids):
        var_index[n, k, :] = b * Z + np.arange(Z)
    n_short = 2 * Z if elastic_penalty is not None else 0
    ncol = nx + n_short

    c = np.zeros(ncol)
    A = np.zeros((3 * Z + B, ncol))
    b_ub = np.zeros(3 * Z + B)
    capacity_row = -np.ones((N, K), dtype=int)
    exp0, core0 = Z + B, 2 * Z + B
    for b, (n, k) in enumerate(bids):
        d = cap[n, k]
        cols = var_index[n, k]
        c[cols] = d * price[n, k]
        A[np.arange(Z), cols] = -d
        A[Z + b, cols] = 1.0
        capacity_row[n, k] = Z + b
        home = zone_of[n]
        for z in range(Z):
            if z != home:
                A[exp0 + home, cols[z]] = d
        A[core0 + home, cols[home]] = -d
    b_ub[:Z] = -instance.demand
    b_ub[Z:Z + B] = 1.0
    b_ub[exp0:exp0 + Z] = instance.export_limit
    b_ub[core0:] = -instance.core_portion

    upper = np.ones(ncol)
    shortfall_cols = None
    if elastic_penalty is not None:
        shortfall_cols = nx + np.arange(2 * Z).reshape(2, Z)
        c[shortfall_cols] = float(elastic_penalty)
        A[np.arange(Z), shortfall_cols[0]] = -1.0
        A[core0 + np.arange(Z), shortfall_cols[1]] = -1.0
        upper[shortfall_cols] = np.inf
    return LpStandardForm(c, A, b_ub, (np.zeros(ncol), upper), var_index, capacity_row, Z,
                          shortfall_cols)


def _solve_scaled(c, A, b, A_eq=None, b_eq=None, pricing="bland"):
    """Row- and cost-scale, solve, and unscale duals back to original units."""
    row_scale = np.abs(A).max(axis=1) if A.size else np.zeros(0)
    row_scale[row_scale == 0] = 1.0
    cscale = float(np.abs(c).max()) if c.size and np.abs(c).max() > 0 else 1.0
    eq_scale = None
    if A_eq is not None and A_eq.shape[0]:
        eq_scale = np.abs(A_eq).max(axis=1)
        eq_scale[eq_scale == 0] = 1.0
        A_eq = A_eq / eq_scale[:, None]
        b_eq = b_eq / eq_scale
    sol = solve_lp(c / cscale, A / row_scale[:, None], b / row_scale, A_eq, b_eq,
                   pricing=pricing)
    return sol, row_scale, cscale


def clear_market(instance: MarketInstance, tiebreak: int | None = None, *,
                 elastic_penalty: float | None = None,
                 pricing: str = "bland") -> ClearingResult:
    """Solve the clearing LP and return fractions with their dual prices.

    With ``tiebreak=n``, among all cost-minimal clearings the one paying
    producer ``n`` least is returned (pessimistic for ``n``). This is done by
    re-optimizing over the optimal face: columns with positive reduced cost
    are fixed to zero and rows with positive multipliers are made tight.
    Any point of that face is complementary to the first-stage duals, so the
    reported multipliers remain valid.

    Raises InfeasibleError when demand cannot be met.
    """
    lp = build_lp(instance, elastic_penalty)
    sol, row_scale, cscale = _solve_scaled(lp.c, lp.A_ub, lp.b_ub, pricing=pricing)
    x = sol.x
    if tiebreak is not None and _has_rivals(instance, tiebreak):
        x = _pessimistic_resolve(instance, lp, sol, row_scale, cscale, tiebreak, pricing)
    duals = sol.ineq_duals / row_scale * cscale
    reduced = np.maximum(sol.reduced_costs, 0.0) * cscale
    return _assemble(instance, lp, x, duals, reduced)


def _has_rivals(instance: MarketInstance, focal: int) -> bool:
    return any(len(l) for n, l in enumerate(instance.ladders) if n != focal)


def _pessimistic_resolve(instance, lp, sol, row_scale, cscale, focal, pricing):
    free = sol.reduced_costs <= FACE_TOL
    tight = sol.ineq_duals > FACE_TOL
    if not free.any():
        return sol.x
    focal_cols = lp.var_index[focal][lp.var_index[focal] >= 0]
    c2 = np.zeros_like(lp.c)
    c2[focal_cols] = lp.c[focal_cols]
    if not np.any(c2[free]):
        return sol.x
    A = lp.A_ub[:, free]
    try:
        sol2, _, _ = _solve_scaled(c2[free], A[~tight], lp.b_ub[~tight], A[tight],
                                   lp.b_ub[tight], pricing=pricing)
    except Exception:  # numerically empty face: keep the first-stage optimum
        return sol.x
    x = np.zeros_like(sol.x)
    x[free] = sol2.x
    # Guard against drift off the optimal face.
    if lp.c @ x > lp.c @ sol.x + 1e-9 * max(1.0, abs(lp.c @ sol.x)):
        return sol.x
    return x


def _assemble(instance, lp: LpStandardForm, xcol, duals, reduced) -> ClearingResult:
    N, K, Z = lp.var_index.shape
    has = lp.var_index >= 0
    fractions = np.zeros((N, K, Z))
    fractions[has] = np.clip(xcol[lp.var_index[has]], 0.0, 1.0)
    bound = np.zeros((N, K, Z))
    bound[has] = reduced[lp.var_index[has]]
    mu = np.zeros((N, K))
    cap_has = lp.capacity_row >= 0
    mu[cap_has] = duals[lp.capacity_row[cap_has]]
    shortfall = np.zeros((2, Z))
    if lp.shortfall_cols is not None:
        shortfall = xcol[lp.shortfall_cols].copy()
    rev = revenues(instance, fractions)
    return ClearingResult(
        fractions=fractions,
        demand_duals=duals[lp.demand_rows].copy(),
        capacity_duals=mu,
        export_duals=duals[lp.export_rows].copy(),
        core_duals=duals[lp.core_rows].copy(),
        bound_duals=bound,
        total_cost=float(rev.sum()),
        revenue=rev,
        shortfall=shortfall,
    )


def zone_flows(instance: MarketInstance, fractions) -> dict[str, np.ndarray]:
    """Served MW per zone, exported MW per home zone, and core MW per zone."""
    fractions = np.asarray(fractions, dtype=float)
    mw = fractions * instance.capacity_matrix()[:, :, None]  # (N, K, Z)
    per_producer = mw.sum(axis=1)  # (N, Z)
    Z = instance.n_zones
    own = np.eye(Z, dtype=bool)[instance.producer_zone]  # (N, Z)
    served = per_producer.sum(axis=0)
    core = np.zeros(Z)
    export = np.zeros(Z)
    for n, z in enumerate(instance.producer_zone):
        core[z] += per_producer[n, z]
        export[z] += per_producer[n, ~own[n]].sum()
    return {"served": served, "export": export, "core": core, "per_producer": per_producer}


def kkt_residual(instance: MarketInstance, result: ClearingResult) -> KktResidual:
    """Maximum violations of stationarity, complementary slackness and feasibility."""
    x = result.fractions
    N, K, Z = x.shape
    expected = (instance.n_producers, instance.max_len, instance.n_zones)
    if x.shape != expected:
        raise ValueError(f"result shape {x.shape} does not match instance {expected}")
    cap = instance.capacity_matrix()
    price = instance.price_matrix()
    mask = instance.bid_mask()
    zone_of = instance.producer_zone
    lam, mu = result.demand_duals, result.capacity_duals
    sig, dlt, nu = result.export_duals, result.core_duals, result.bound_duals

    own = np.eye(Z, dtype=bool)[zone_of][:, None, :]  # (N, 1, Z)
    d = cap[:, :, None]
    grad = (d * price[:, :, None] - lam[None, None, :] * d + mu[:, :, None]
            + np.where(own, 0.0, sig[zone_of][:, None, None] * d)
            - np.where(own, dlt[zone_of][:, None, None] * d, 0.0)
            - nu)
    stationarity = float(np.abs(grad[mask]).max()) if mask.any() else 0.0

    flows = zone_flows(instance, x)
    D, E, C = instance.demand, instance.export_limit, instance.core_portion
    served = flows["served"] + result.shortfall[0]
    core = flows["core"] + result.shortfall[1]
    used = x.sum(axis=2)
    comp = [
        lam * (served - D),
        (mu * (1.0 - used))[mask],
        sig * (E - flows["export"]),
        dlt * (core - C),
        (nu * x)[mask],
    ]
    complementarity = max(float(np.abs(v).max()) if v.size else 0.0 for v in comp)
    viol = [
        D - served,
        (used - 1.0)[mask],
        flows["export"] - E,
        C - core,
        -x.ravel(),
        x.ravel() - 1.0,
    ]
    primal = max(0.0, *(float(v.max()) for v in viol if v.size))
    duals = [lam, mu[mask], sig, dlt, nu[mask]]
    dual = max(0.0, *(float(-v.min()) for v in duals if v.size))
    return KktResidual(stationarity, complementarity, primal, dual)


def dual_objective(instance: MarketInstance, result: ClearingResult) -> float:
    """LP dual value: sum lambda*D - sum mu - sum sigma*E + sum delta*C."""
    mask = instance.bid_mask()
    return float(result.demand_duals @ instance.demand
                 - result.capacity_duals[mask].sum()
                 - result.export_duals @ instance.export_limit
                 + result.core_duals @ instance.core_portion)
