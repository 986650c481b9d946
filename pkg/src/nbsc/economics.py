"""Procurement cost, penalties and per-replication profit accounting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import DomainError, InfeasibleScenarioError

log = logging.getLogger(__name__)

FILLRATE_MODES = ("symmetric", "shortfall")


@dataclass(frozen=True)
class EconomicParams:
    unit_price: float = 25.0
    salvage_value: float = 1.0
    holding_cost: float = 2.0
    stockout_penalty: float = 15.0
    variance_weight: float = 2.0
    risk_weight: float = 5.0
    risk_exponent: float = 2.0
    fillrate_weight: float = 100.0
    fillrate_target: float = 0.90
    adoption_scale: float = 150.0
    adoption_exponent: float = 2.0
    a1: float = 5.0
    a2: float = 3.0
    a3: float = 3.0
    a4: float = 4.0
    budget: float = 10_000.0
    # Curvature of the cost-reduction term a4 * alpha**phi_exponent; None shares adoption_exponent.
    phi_exponent: float | None = None
    fillrate_mode: str = "symmetric"

    def __post_init__(self):
        for f in fields(self):
            if f.name in ("phi_exponent", "fillrate_mode"):
                continue
            if getattr(self, f.name) < 0:
                raise DomainError(f"{f.name} must be non-negative")
        if not 0 < self.fillrate_target < 1:
            raise DomainError("fillrate_target must lie in (0, 1)")
        if self.adoption_exponent < 1:
            raise DomainError("adoption_exponent must be >= 1")
        if self.salvage_value > self.unit_price:
            raise DomainError("salvage_value may not exceed unit_price")
        if self.phi_exponent is not None and self.phi_exponent <= 0:
            raise DomainError("phi_exponent must be positive")
        if self.fillrate_mode not in FILLRATE_MODES:
            raise DomainError(f"fillrate_mode must be one of {FILLRATE_MODES}")

    @property
    def phi_power(self) -> float:
        return self.adoption_exponent if self.phi_exponent is None else self.phi_exponent


@dataclass(frozen=True)
class Supplier:
    id: str
    base_cost: float
    readiness: float = 0.0

    def __post_init__(self):
        if not self.base_cost > 0:
            raise DomainError(f"supplier {self.id}: base_cost must be positive")
        if not 0 <= self.readiness <= 1:
            raise DomainError(f"supplier {self.id}: readiness must lie in [0, 1]")


@dataclass(frozen=True)
class Scenario:
    alpha: float
    quantities: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
        for sid, q in self.quantities.items():
            if q < 0 or int(q) != q:
                raise DomainError(f"quantity for {sid} must be a non-negative integer")

    @property
    def total_quantity(self) -> int:
        return int(sum(self.quantities.values()))


@dataclass(frozen=True)
class ProfitBreakdown:
    revenue: float
    salvage: float
    stockout: float
    holding: float
    procurement: float
    adoption: float

    @property
    def profit(self) -> float:
        return (self.revenue + self.salvage - self.stockout - self.holding
                - self.procurement - self.adoption)

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check_alpha(alpha: float) -> None:
    if not 0 <= alpha <= 1:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")


def phi(alpha: float, econ: EconomicParams) -> float:
    return alpha ** econ.phi_power


def raw_unit_cost(alpha: float, supplier: Supplier, econ: EconomicParams) -> float:
    """Unfloored ``c0 - a1 a - a2 b - a3 a b - a4 phi(a)``."""
    _check_alpha(alpha)
    b = supplier.readiness
    return (supplier.base_cost - econ.a1 * alpha - econ.a2 * b
            - econ.a3 * alpha * b - econ.a4 * phi(alpha, econ))


def procurement_unit_cost(alpha: float, supplier: Supplier, econ: EconomicParams) -> float:
    cost = raw_unit_cost(alpha, supplier, econ)
    if cost < 0:
        log.warning("unit cost for supplier %s is negative (%.4g) at alpha=%g; floored at 0",
                    supplier.id, cost, alpha)
        return 0.0
    return cost


def adoption_cost(alpha: float, econ: EconomicParams) -> float:
    _check_alpha(alpha)
    return econ.adoption_scale * alpha ** econ.adoption_exponent


def _supplier_map(suppliers) -> dict[str, Supplier]:
    return {s.id: s for s in suppliers}


def procurement_cost(scenario: Scenario, suppliers, econ: EconomicParams) -> float:
    by_id = _supplier_map(suppliers)
    total = 0.0
    for sid in sorted(scenario.quantities):
        if sid not in by_id:
            raise KeyError(f"scenario references unknown supplier {sid!r}")
        total += procurement_unit_cost(scenario.alpha, by_id[sid], econ) * scenario.quantities[sid]
    return total


def budget_check(scenario: Scenario, suppliers, econ: EconomicParams) -> bool:
    """Whether total procurement spend stays within the budget (boundary inclusive)."""
    spend = procurement_cost(scenario, suppliers, econ)
    return spend <= econ.budget + 1e-9 * max(1.0, econ.budget)


def replication_profit(scenario: Scenario, demand: int, suppliers,
                       econ: EconomicParams) -> tuple[float, ProfitBreakdown]:
    if demand < 0:
        raise DomainError("demand must be non-negative")
    if not budget_check(scenario, suppliers, econ):
        raise InfeasibleScenarioError("scenario exceeds the procurement budget")
    q = scenario.total_quantity
    sold = min(q, demand)
    leftover = max(q - demand, 0)
    short = max(demand - q, 0)
    parts = ProfitBreakdown(
        revenue=econ.unit_price * sold,
        salvage=econ.salvage_value * leftover,
        stockout=econ.stockout_penalty * short,
        holding=econ.holding_cost * leftover,
        procurement=procurement_cost(scenario, suppliers, econ),
        adoption=adoption_cost(scenario.alpha, econ),
    )
    return parts.profit, parts


def variance_penalty(variance: float, econ: EconomicParams) -> float:
    if variance < 0:
        raise DomainError("variance must be non-negative")
    return econ.variance_weight * variance


def risk_penalty(stockout_prob: float, econ: EconomicParams) -> float:
    if not 0 <= stockout_prob <= 1:
        raise DomainError("stockout probability must lie in [0, 1]")
    return econ.risk_weight * stockout_prob ** econ.risk_exponent


def fillrate_penalty(fill_rate: float, econ: EconomicParams) -> float:
    if not 0 <= fill_rate <= 1:
        raise DomainError("fill rate must lie in [0, 1]")
    gap = econ.fillrate_target - fill_rate
    if econ.fillrate_mode == "shortfall":
        gap = max(gap, 0.0)
    return econ.fillrate_weight * gap * gap


def inventory_outcomes(q: int, draws: np.ndarray) -> dict[str, np.ndarray]:
    """Per-replication sales, shortage, holding units and end stock for ``(M, H)`` demand.

    Stock ``q`` is placed once and depleted across periods without replenishment;
    holding accrues on stock left at the end of every period, salvage on the
    final remainder.  With one period this is the newsvendor accounting.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=np.int64))
    m, horizon = draws.shape
    stock = np.full(m, q, dtype=np.int64)
    sold = np.zeros(m, dtype=np.int64)
    short = np.zeros(m, dtype=np.int64)
    held = np.zeros(m, dtype=np.int64)
    for t in range(horizon):
        d = draws[:, t]
        s = np.minimum(stock, d)
        sold += s
        short += d - s
        stock -= s
        held += stock
    return {"sold": sold, "short": short, "held": held, "leftover": stock}
