"""Single-producer best response with an exact (pessimistic) lower level.

The outer search is a coordinate pattern search over the ladder's
``(price, capacity)`` pairs: one coarse pass on a 16-point grid per axis,
then two refinement passes of 8 points bracketing the incumbent. The ladder
length is kept fixed. Every candidate is scored by re-clearing the market,
so the inner problem is always solved exactly.

Two lower levels are available:

``"market"``
    the whole market is re-cleared with the focal producer as the
    pessimistic tiebreak. Opponents' fractions adapt to the candidate.
``"residual"``
    opponents' fractions stay fixed and the focal producer alone covers
    the tracking terms (residual demand, export room, core requirement).
    This is the decomposed problem used by Gauss-Seidel, where only the
    focal producer's block of the joint variable moves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InfeasibleError
from ..lp_clearing import clear_market
from ..market_core import BidLadder, ClearingResult, MarketInstance, Producer
from .profile import StrategyProfile, residual_instance, tracking_terms

LOWER_LEVELS = ("market", "residual")


@dataclass(frozen=True)
class GridConfig:
    """Resolution of the pattern search.

    ``improve_rtol`` is the minimum accepted gain relative to ``Δ̄·π̄``.
    """

    coarse_points: int = 16
    refine_points: int = 8
    refine_passes: int = 2
    max_cycles: int = 3
    improve_rtol: float = 1e-9


@dataclass(frozen=True)
class BestResponse:
    ladder: BidLadder
    revenue: float  # focal revenue at the pessimistic lower-level solution
    objective: float  # revenue minus penalty and proximal terms
    clearing: ClearingResult  # lower-level solution behind ``revenue``
    lower_level: str
    evaluations: int
    shortfall: float = 0.0


def _axis_grid(lo: float, hi: float, n: int) -> np.ndarray:
    if hi - lo <= 1e-12:
        return np.array([lo])
    if lo > 0:
        return lo * (hi / lo) ** np.linspace(0.0, 1.0, n)
    return np.linspace(lo, hi, n)


def _coarse_halfwidth(v: float, lo: float, hi: float, n: int) -> float:
    """Spacing of the coarse grid near ``v``."""
    if lo > 0:
        return v * ((hi / lo) ** (1.0 / (n - 1)) - 1.0)
    return (hi - lo) / (n - 1)


def normalized(ladder: BidLadder, producer: Producer) -> np.ndarray:
    """Ladder as a flat vector of capacities/Δ̄ followed by prices/π̄."""
    caps = ladder.capacities / max(producer.capacity_max, 1e-12)
    prices = ladder.prices / max(producer.price_max, 1e-12)
    return np.concatenate([caps, prices])


class _Evaluator:
    """Scores candidate ladders for one focal producer, with memoization."""

    def __init__(self, instance, profile, focal, lower_level, penalty):
        self.instance = instance
        self.focal = focal
        self.lower_level = lower_level
        self.penalty = penalty
        self.opponents = profile.instance(instance)
        if lower_level == "residual":
            self.terms = tracking_terms(instance, profile, focal)
        self.cache: dict[tuple, tuple[float, float, ClearingResult] | None] = {}

    def __call__(self, caps: np.ndarray, prices: np.ndarray):
        key = tuple(np.round(np.concatenate([caps, prices]), 12))
        if key in self.cache:
            return self.cache[key]
        ladder = BidLadder.from_arrays(self.focal, caps, prices)
        try:
            if self.lower_level == "residual":
                inst = residual_instance(self.instance, self.terms, self.focal, ladder)
                res = clear_market(inst, elastic_penalty=self.penalty)
                revenue = float(res.revenue[0])
            else:
                inst = self.opponents.with_ladder(self.focal, ladder)
                res = clear_market(inst, tiebreak=self.focal, elastic_penalty=self.penalty)
                revenue = float(res.revenue[self.focal])
        except InfeasibleError:
            out = None
        else:
            short = float(res.shortfall.sum()) if self.penalty is not None else 0.0
            if self.lower_level == "market" and self.penalty is not None:
                home = self.instance.producers[self.focal].zone
                short = float(res.shortfall[0].sum() + res.shortfall[1, home])
            out = (revenue, short, res)
        self.cache[key] = out
        return out


def best_response(instance: MarketInstance, profile: StrategyProfile, focal: int,
                  grid: GridConfig = GridConfig(), *, lower_level: str = "market",
                  tau: float = 0.0, reference: BidLadder | None = None,
                  penalty: float | None = None) -> BestResponse:
    """Search the focal producer's bid box for its revenue-maximizing ladder.

    Args:
        instance: market template (zones and producers).
        profile: current strategy profile; opponents' ladders are held fixed
            and, for ``lower_level="residual"``, so are their fractions.
        focal: producer id.
        grid: pattern-search resolution.
        lower_level: ``"market"`` or ``"residual"`` (see module docstring).
        tau: weight of the proximal term ``tau·Δ̄·π̄·||ŷ - ŷ_ref||²`` on the
            normalized ladder.
        reference: ladder the proximal term is centred on (default: the
            profile's current ladder).
        penalty: if set, the lower level is cleared elastically and the focal
            producer is charged ``penalty`` per MW of demand shortfall and of
            its home zone's core shortfall.

    Raises:
        InfeasibleError: when the incumbent ladder itself cannot be cleared.
    """
    if lower_level not in LOWER_LEVELS:
        raise ValueError(f"lower_level must be one of {LOWER_LEVELS}, got {lower_level!r}")
    producer = instance.producers[focal]
    incumbent = profile.ladders[focal]
    if len(incumbent) == 0:
        raise ValueError(f"producer {focal} has an empty ladder")
    reference = incumbent if reference is None else reference
    if len(reference) != len(incumbent):
        raise ValueError("reference ladder must have the incumbent's length")
    evaluate = _Evaluator(instance, profile, focal, lower_level, penalty)
    scale = producer.capacity_max * producer.price_max
    y_ref = normalized(reference, producer)
    M = penalty or 0.0

    def score(caps, prices):
        out = evaluate(caps, prices)
        if out is None:
            return -np.inf
        revenue, short, _ = out
        y = np.concatenate([caps / producer.capacity_max, prices / producer.price_max])
        return revenue - M * short - tau * scale * float(np.sum((y - y_ref) ** 2))

    caps, prices = incumbent.capacities.copy(), incumbent.prices.copy()
    best = score(caps, prices)
    if not np.isfinite(best):
        raise InfeasibleError(f"incumbent ladder of producer {focal} cannot be cleared")
    caps, prices, best = _pattern_search(score, caps, prices, best, producer, grid,
                                         grid.improve_rtol * max(scale, 1.0))

    revenue, short, res = evaluate(caps, prices)
    if tau == 0.0 and penalty is None and revenue <= 1e-9 * max(scale, 1.0):
        # Revenue is zero everywhere reachable: offer as little as allowed.
        floor = np.full_like(caps, producer.capacity_min)
        out = evaluate(floor, prices)
        if out is not None and out[0] <= 1e-9 * max(scale, 1.0):
            caps = floor
            revenue, short, res = out
            best = score(caps, prices)
    return BestResponse(BidLadder.from_arrays(focal, caps, prices), revenue, best, res,
                        lower_level, len(evaluate.cache), short)


def _pattern_search(score, caps, prices, best, producer: Producer, grid: GridConfig, tol):
    L = len(caps)
    p_lo, p_hi = producer.price_min, producer.price_max
    c_lo = producer.capacity_min
    coords = [(k, axis) for k in range(L) for axis in ("price", "cap")]
    halfwidth: dict = {}

    def bounds(k, axis):
        if axis == "price":
            return p_lo, p_hi
        hi = min(producer.capacity_max, producer.capacity_max - (caps.sum() - caps[k]))
        return c_lo, hi

    for phase in range(1 + grid.refine_passes):
        for _ in range(grid.max_cycles):
            moved = False
            for k, axis in coords:
                lo, hi = bounds(k, axis)
                if hi < lo - 1e-12:
                    continue
                arr = prices if axis == "price" else caps
                v = arr[k]
                if phase == 0:
                    cands = _axis_grid(lo, hi, grid.coarse_points)
                else:
                    h = halfwidth.get((k, axis))
                    if h is None:
                        h = _coarse_halfwidth(max(v, lo), lo, hi, grid.coarse_points)
                        for _p in range(1, phase):
                            h = 2 * h / (grid.refine_points - 1)
                    cands = np.clip(np.linspace(v - h, v + h, grid.refine_points), lo, hi)
                for cand in np.unique(cands):
                    if abs(cand - v) <= 1e-12:
                        continue
                    old = arr[k]
                    arr[k] = cand
                    s = score(caps, prices)
                    if s > best + tol:
                        best, v, moved = s, cand, True
                    else:
                        arr[k] = old
            if not moved:
                break
        # Next pass brackets the incumbent by the current pass's spacing.
        for k, axis in coords:
            lo, hi = bounds(k, axis)
            if phase == 0:
                v = (prices if axis == "price" else caps)[k]
                halfwidth[(k, axis)] = _coarse_halfwidth(max(v, lo), lo, max(hi, lo),
                                                         grid.coarse_points)
            else:
                halfwidth[(k, axis)] = 2 * halfwidth[(k, axis)] / (grid.refine_points - 1)
    return caps, prices, best


def apply_best_response(instance: MarketInstance, profile: StrategyProfile, focal: int,
                        br: BestResponse) -> StrategyProfile:
    """Profile after the focal producer adopts ``br`` and its lower-level solution."""
    res = br.clearing
    L = len(br.ladder)
    if br.lower_level == "residual":
        home = instance.producers[focal].zone
        return profile.replace_producer(
            focal, br.ladder, res.fractions[0, :L], res.demand_duals,
            res.capacity_duals[0, :L], float(res.export_duals[home]),
            float(res.core_duals[home]))
    inst = profile.instance(instance).with_ladder(focal, br.ladder)
    return StrategyProfile.from_clearing(inst, res)
