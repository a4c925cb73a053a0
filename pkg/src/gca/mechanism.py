"""Greedy conflict-free combinatorial auction engine.

Patients bid for bundles of experts (all-or-nothing). Bids are ranked by
``valuation / sqrt(bundle size)`` and admitted greedily whenever the demanded
bundle is disjoint from everything granted so far. Two payment rules are
provided:

* ``literal``: a winner is charged off the first later bid that conflicts
  with it and overlaps no earlier bid other than the winner itself.
* ``critical``: a winner is charged its critical value, the infimum
  valuation at which it would still win against the other bids.

All operations are pure; inputs are never mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

__all__ = [
    "RULE_LITERAL",
    "RULE_CRITICAL",
    "RULES",
    "MalformedInstanceError",
    "Bid",
    "Instance",
    "Allocation",
    "PaymentVector",
    "MechanismResult",
    "score",
    "sort_patients",
    "greedy_allocate",
    "payment_literal",
    "payment_critical",
    "run_mechanism",
    "utility",
]

RULE_LITERAL = "literal"
RULE_CRITICAL = "critical"
RULES = (RULE_LITERAL, RULE_CRITICAL)


class MalformedInstanceError(ValueError):
    """A bid or instance violates a structural constraint."""


@dataclass(frozen=True)
class Bid:
    """One patient's declared type: a demanded expert bundle and a valuation.

    ``demand`` is a set of expert indices; duplicates are impossible by
    construction. The bid is all-or-nothing: the patient values exactly this
    bundle at ``valuation`` and anything else at zero.
    """

    patient_id: int
    demand: frozenset[int]
    valuation: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "demand", frozenset(self.demand))
        object.__setattr__(self, "valuation", float(self.valuation))
        if self.patient_id < 0:
            raise MalformedInstanceError(f"patient id must be >= 0, got {self.patient_id}")
        if not self.demand:
            raise MalformedInstanceError(f"patient {self.patient_id}: demand must be non-empty")
        if any(e < 0 for e in self.demand):
            raise MalformedInstanceError(f"patient {self.patient_id}: negative expert index")
        if not math.isfinite(self.valuation) or self.valuation < 0:
            raise MalformedInstanceError(
                f"patient {self.patient_id}: valuation must be finite and >= 0, got {self.valuation}"
            )


@dataclass(frozen=True)
class Instance:
    """A full auction: ``num_experts`` distinct experts and an ordered bid list.

    Patient ids coincide with list positions (0..n-1). Removing a bidder is
    modelled by building a new bid list, never by mutating this one.
    """

    num_experts: int
    bids: tuple[Bid, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "bids", tuple(self.bids))
        if self.num_experts < 0:
            raise MalformedInstanceError(f"num_experts must be >= 0, got {self.num_experts}")
        for pos, bid in enumerate(self.bids):
            if bid.patient_id != pos:
                raise MalformedInstanceError(
                    f"bid at position {pos} has patient id {bid.patient_id}; ids must be 0..n-1 in order"
                )
            for e in bid.demand:
                if e >= self.num_experts:
                    raise MalformedInstanceError(
                        f"patient {pos}: expert index {e} out of range [0, {self.num_experts})"
                    )

    @property
    def num_patients(self) -> int:
        return len(self.bids)

    def replace(
        self,
        patient_id: int,
        demand: Optional[Iterable[int]] = None,
        valuation: Optional[float] = None,
    ) -> "Instance":
        """Return a copy with one bid's demand and/or valuation swapped out."""
        old = self.bids[patient_id]
        new = Bid(
            patient_id,
            frozenset(demand) if demand is not None else old.demand,
            valuation if valuation is not None else old.valuation,
        )
        bids = list(self.bids)
        bids[patient_id] = new
        return Instance(self.num_experts, tuple(bids))


@dataclass(frozen=True)
class Allocation:
    """Conflict-free outcome: the winner set and each winner's granted bundle."""

    winners: frozenset[int]
    granted: dict[int, frozenset[int]] = field(default_factory=dict)


@dataclass(frozen=True)
class PaymentVector:
    """Per-patient charges, index-aligned with the instance's bid list."""

    charges: tuple[float, ...]


@dataclass(frozen=True)
class MechanismResult:
    """Allocation, payments and the audit trail of one mechanism run."""

    allocation: Allocation
    payments: PaymentVector
    welfare: float
    sorted_order: tuple[int, ...]
    critical_index: dict[int, Optional[int]]
    rule: str


def score(bid: Bid) -> float:
    """Ranking key of a bid: valuation divided by the square root of its bundle size."""
    if not bid.demand:
        raise MalformedInstanceError(f"patient {bid.patient_id}: demand must be non-empty")
    return bid.valuation / math.sqrt(len(bid.demand))


def sort_patients(instance: Instance) -> list[int]:
    """Patient ids by score descending; ties broken by ascending patient id."""
    return sorted(range(instance.num_patients), key=lambda i: (-score(instance.bids[i]), i))


def _demand_masks(bids: Iterable[Bid]) -> list[int]:
    # One arbitrary-width bitmask per bid; keeps the greedy scan to O(1) set ops.
    masks = []
    for bid in bids:
        m = 0
        for e in bid.demand:
            m |= 1 << e
        masks.append(m)
    return masks


def greedy_allocate(instance: Instance) -> tuple[Allocation, list[int]]:
    """Scan bids in sorted order, admitting each whose bundle is still free.

    Returns the conflict-free allocation together with the sorted order it
    was derived from.
    """
    order = sort_patients(instance)
    masks = _demand_masks(instance.bids)
    taken = 0
    winners = []
    for i in order:
        if masks[i] & taken:
            continue
        winners.append(i)
        taken |= masks[i]
    granted = {i: instance.bids[i].demand for i in winners}
    return Allocation(winners=frozenset(winners), granted=granted), order


def payment_literal(
    instance: Instance, sorted_order: list[int], allocation: Allocation
) -> tuple[PaymentVector, dict[int, Optional[int]]]:
    """Charge each winner off its first unblocked conflicting successor.

    For winner ``i``, the charged bid ``j`` is the earliest bid after ``i``
    in the sorted order such that ``j`` conflicts with ``i`` and no bid
    earlier than ``j`` (other than ``i``) overlaps ``j``. The charge is
    ``score(j) * sqrt(|demand(i)|)``; a winner with no such ``j`` pays 0.
    Losers pay 0.
    """
    n = instance.num_patients
    masks = _demand_masks(instance.bids)
    pos = [0] * n
    for p, i in enumerate(sorted_order):
        pos[i] = p
    # For each expert, the sorted positions of the bids that demand it.
    users: dict[int, list[int]] = {}
    for p, i in enumerate(sorted_order):
        for e in instance.bids[i].demand:
            users.setdefault(e, []).append(p)

    charges = [0.0] * n
    critical: dict[int, Optional[int]] = {}
    for i in allocation.winners:
        p_i = pos[i]
        found: Optional[int] = None
        for q in range(p_i + 1, n):
            j = sorted_order[q]
            if not (masks[j] & masks[i]):
                continue
            # Every bid placed before j, other than i, must be disjoint from j.
            # Per expert of j that means: no user before position q except i.
            blocked = False
            for e in instance.bids[j].demand:
                us = users[e]
                if us[0] < q and us[0] != p_i:
                    blocked = True
                    break
                if us[0] == p_i and len(us) > 1 and us[1] < q:
                    blocked = True
                    break
            if not blocked:
                found = j
                break
        critical[i] = found
        if found is not None:
            charges[i] = score(instance.bids[found]) * math.sqrt(len(instance.bids[i].demand))
    return PaymentVector(charges=tuple(charges)), critical


def payment_critical(
    instance: Instance, allocation: Allocation
) -> tuple[PaymentVector, dict[int, Optional[int]]]:
    """Charge each winner its critical value.

    For winner ``i``, rerun the greedy scan with ``i`` removed and find the
    first admitted bid ``j`` whose bundle overlaps ``i``'s. Bidding above
    ``score(j) * sqrt(|demand(i)|)`` keeps ``i`` ahead of ``j`` and winning;
    bidding below lets ``j`` claim the overlap first. With no such ``j`` the
    winner is unopposed and pays 0. Losers pay 0.
    """
    n = instance.num_patients
    masks = _demand_masks(instance.bids)
    order = sort_patients(instance)
    charges = [0.0] * n
    critical: dict[int, Optional[int]] = {}
    for i in allocation.winners:
        taken = 0
        found: Optional[int] = None
        for j in order:
            if j == i or (masks[j] & taken):
                continue
            if masks[j] & masks[i]:
                found = j
                break
            taken |= masks[j]
        critical[i] = found
        if found is not None:
            charges[i] = score(instance.bids[found]) * math.sqrt(len(instance.bids[i].demand))
    return PaymentVector(charges=tuple(charges)), critical


def run_mechanism(instance: Instance, rule: str = RULE_LITERAL) -> MechanismResult:
    """Run allocation plus the selected payment rule and collect the audit trail."""
    if rule not in RULES:
        raise ValueError(f"unknown payment rule {rule!r}; expected one of {RULES}")
    allocation, order = greedy_allocate(instance)
    if rule == RULE_LITERAL:
        payments, critical = payment_literal(instance, order, allocation)
    else:
        payments, critical = payment_critical(instance, allocation)
    welfare = sum(instance.bids[i].valuation for i in sorted(allocation.winners))
    return MechanismResult(
        allocation=allocation,
        payments=payments,
        welfare=welfare,
        sorted_order=tuple(order),
        critical_index=critical,
        rule=rule,
    )


def utility(true_value: float, won: bool, charge: float) -> float:
    """Quasilinear utility: true value minus charge when the bundle is granted, else 0."""
    if charge < 0:
        raise ValueError(f"charge must be >= 0, got {charge}")
    return true_value - charge if won else 0.0
