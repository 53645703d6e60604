"""Market metrics, run summaries and plot-data files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from .errors import ZeroTotalError
from .market_core import ClearingResult, MarketInstance, revenues

FIG2_COLUMNS = ("episode", "agent", "zone", "mean_reward", "std_reward")
FIG3_COLUMNS = ("algorithm", "days", "mean_cost", "gini")  # then zone{z}_cost, zone{z}_gini
FIG4_COLUMNS = ("algorithm", "c0", "c1", "export0", "export1", "zone", "mean_cost")


def gini(profits) -> float:
    """Gini index of non-negative profits.

    ``G = (n + 1 - 2 * sum_i (n + 1 - i) J_(i) / sum J) / n`` with profits
    ranked in increasing order (``i`` from 1).
    """
    J = np.sort(np.asarray(profits, dtype=float).ravel())
    if J.size == 0:
        raise ValueError("gini of an empty profit vector")
    if np.any(J < 0):
        raise ValueError("profits must be non-negative")
    total = J.sum()
    if total <= 0:
        raise ZeroTotalError("profits sum to zero")
    n = J.size
    weights = n + 1 - np.arange(1, n + 1)
    return float((n + 1 - 2.0 * np.dot(weights, J) / total) / n)


@dataclass(frozen=True)
class Outcome:
    """Accepted fractions and payments of one day without clearing duals.

    Summarizes an equilibrium profile at its own fractions, which need not
    be the cost-minimal clearing of its ladders.
    """

    fractions: np.ndarray  # (N, K, Z)
    total_cost: float
    revenue: np.ndarray  # (N,)

    @classmethod
    def from_fractions(cls, instance: MarketInstance, fractions) -> Outcome:
        fractions = np.asarray(fractions, dtype=float)
        rev = revenues(instance, fractions)
        return cls(fractions, float(rev.sum()), rev)


@dataclass
class RunSummary:
    tag: str
    days: int
    mean_cost: float
    zone_cost: np.ndarray  # (Z,) mean per day
    mean_profit: np.ndarray  # (N,)
    gini: float
    zone_gini: np.ndarray  # (Z,); NaN where a zone earned nothing
    attribution: str = "supplier"
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "days": self.days,
            "mean_cost": self.mean_cost,
            "zone_cost": self.zone_cost.tolist(),
            "mean_profit": self.mean_profit.tolist(),
            "gini": self.gini,
            "zone_gini": [None if np.isnan(g) else g for g in self.zone_gini.tolist()],
            "attribution": self.attribution,
            **({"meta": self.meta} if self.meta else {}),
        }


def zone_costs(instance: MarketInstance, result: ClearingResult | Outcome,
               attribution: str = "supplier") -> np.ndarray:
    """Payments per zone for one clearing.

    ``"supplier"`` books each bid's payment to the producer's home zone;
    ``"consumer"`` books it to the zone the accepted MW serve.
    """
    if attribution == "supplier":
        return np.bincount(instance.producer_zone, result.revenue, minlength=instance.n_zones)
    if attribution == "consumer":
        pay = instance.price_matrix()[:, :, None] * instance.capacity_matrix()[:, :, None]
        return (pay * result.fractions).sum(axis=(0, 1))
    raise ValueError(f"unknown attribution {attribution!r}")


def _safe_gini(p) -> float:
    try:
        return gini(p)
    except ZeroTotalError:
        return float("nan")


def summarize_run(results: Sequence[ClearingResult | Outcome], tag: str,
                  instances: Sequence[MarketInstance] | MarketInstance,
                  attribution: str = "supplier", meta: dict | None = None) -> RunSummary:
    """Average daily cost, zone costs, profits and Gini indices over ``results``.

    ``instances`` is the cleared instance per day, or one instance shared by
    all days (needed for zone membership and, for consumer attribution,
    the bids).
    """
    if not results:
        raise ValueError("no results to summarize")
    if isinstance(instances, MarketInstance):
        instances = [instances] * len(results)
    if len(instances) != len(results):
        raise ValueError("need one instance per result")
    costs = np.array([r.total_cost for r in results])
    zc = np.array([zone_costs(i, r, attribution) for i, r in zip(instances, results)])
    profits = np.array([r.revenue for r in results]).mean(axis=0)
    zone_of = instances[0].producer_zone
    zg = np.array([_safe_gini(profits[zone_of == z]) for z in range(instances[0].n_zones)])
    return RunSummary(tag, len(results), float(costs.mean()), zc.mean(axis=0), profits,
                      _safe_gini(profits), zg, attribution, dict(meta or {}))


def _fmt(v) -> str:
    return f"{v:.10g}" if isinstance(v, float) else str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def emit_plot_data(summaries: Sequence[RunSummary], traces: dict | None, out_dir,
                   sweep: Sequence[dict] | None = None) -> list[Path]:
    """Write the figure CSVs and a JSON summary into ``out_dir``.

    * ``fig2_rewards.csv``: episodic rewards per agent (``traces`` maps a
      run tag to a training trace).
    * ``fig3_costs.csv``: one row per summary, with per-zone cost and Gini
      columns appended after ``FIG3_COLUMNS``.
    * ``fig4_coupling.csv``: cost per zone along a coupling sweep; each
      ``sweep`` entry has ``algorithm, c0, c1, export, zone_cost``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig2 = []
    for tag in sorted(traces or {}):
        for r in traces[tag].rows:
            fig2.append((r.episode, r.agent, r.zone, r.mean_reward, r.std_reward))
    Z = max((s.zone_cost.size for s in summaries), default=0)
    fig3_header = FIG3_COLUMNS + tuple(f"zone{z}_{k}" for k in ("cost", "gini") for z in range(Z))
    fig3 = []
    for s in summaries:
        fig3.append((s.tag, s.days, s.mean_cost, s.gini, *s.zone_cost.tolist(),
                     *s.zone_gini.tolist()))
    fig4 = []
    for pt in sweep or []:
        for z, c in enumerate(pt["zone_cost"]):
            fig4.append((pt["algorithm"], float(pt["c0"]), float(pt["c1"]),
                         float(pt["export"][0]), float(pt["export"][1]), z, float(c)))
    paths = [out / "fig2_rewards.csv", out / "fig3_costs.csv", out / "fig4_coupling.csv"]
    _write_csv(paths[0], FIG2_COLUMNS, fig2)
    _write_csv(paths[1], fig3_header, fig3)
    _write_csv(paths[2], FIG4_COLUMNS, fig4)
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps([s.to_dict() for s in summaries], indent=2,
                                       sort_keys=True) + "\n")
    return paths + [summary_path]


def spearman(a, b) -> float:
    """Rank correlation with average ranks for ties."""
    return float(spearmanr(a, b).statistic)
