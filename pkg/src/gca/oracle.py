"""Independent brute-force ground truth for the greedy mechanism.

Nothing here reuses the mechanism's payment logic: optimal welfare comes
from exhaustive subset search, critical values from bisection over rerun
allocations, and incentive checks from utility evaluation on a threshold
grid. Tests compare these against the fast paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

from .mechanism import Instance, greedy_allocate, run_mechanism, score, utility

__all__ = [
    "OPT_MAX_PATIENTS",
    "InstanceTooLargeError",
    "OptResult",
    "DeviationReport",
    "optimal_welfare",
    "verify_conflict_free",
    "critical_value_bisect",
    "deviation_grid",
    "outcome_table",
    "deviation_search",
]

# 2^25 subsets is the accepted worst case for the exhaustive search.
OPT_MAX_PATIENTS = 25

UTILITY_TOL = 1e-9
BISECT_TOL = 1e-9


class InstanceTooLargeError(ValueError):
    """The exhaustive search guard rejected the instance."""


@dataclass(frozen=True)
class OptResult:
    """Welfare-maximal conflict-free winner set found by exhaustive search."""

    opt_welfare: float
    opt_winners: frozenset[int]


@dataclass(frozen=True)
class DeviationReport:
    """Best single-patient valuation misreport found for one true value."""

    patient_id: int
    true_value: float
    best_deviation_value: float
    truthful_utility: float
    best_deviation_utility: float
    violation: bool


def optimal_welfare(instance: Instance) -> OptResult:
    """Exhaustive maximum-welfare conflict-free subset.

    Depth-first over patients in id order, include-branch first, pruning a
    branch only when even granting every remaining bid cannot beat the
    incumbent. Welfare ties resolve to the lexicographically smallest
    winner set. Guarded to ``OPT_MAX_PATIENTS`` bids.
    """
    n = instance.num_patients
    if n > OPT_MAX_PATIENTS:
        raise InstanceTooLargeError(
            f"exhaustive search supports at most {OPT_MAX_PATIENTS} patients, got {n}"
        )
    masks = []
    for bid in instance.bids:
        m = 0
        for e in bid.demand:
            m |= 1 << e
        masks.append(m)
    values = [bid.valuation for bid in instance.bids]
    suffix = [0.0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] + values[i]

    best_welfare = 0.0
    best_set: tuple[int, ...] = ()
    chosen: list[int] = []

    def walk(i: int, taken: int, welfare: float) -> None:
        nonlocal best_welfare, best_set
        if welfare + suffix[i] < best_welfare:
            return
        if i == n:
            key = tuple(chosen)
            if welfare > best_welfare or (welfare == best_welfare and key < best_set):
                best_welfare = welfare
                best_set = key
            return
        if not (masks[i] & taken):
            chosen.append(i)
            walk(i + 1, taken | masks[i], welfare + values[i])
            chosen.pop()
        walk(i + 1, taken, welfare)

    walk(0, 0, 0.0)
    return OptResult(opt_welfare=best_welfare, opt_winners=frozenset(best_set))


def verify_conflict_free(instance: Instance, winners: Iterable[int]) -> bool:
    """True iff the demands of the given patients are pairwise disjoint."""
    taken: set[int] = set()
    for i in winners:
        demand = instance.bids[i].demand
        if demand & taken:
            return False
        taken |= demand
    return True


def _wins_at(instance: Instance, patient_id: int, value: float) -> bool:
    allocation, _ = greedy_allocate(instance.replace(patient_id, valuation=value))
    return patient_id in allocation.winners


def critical_value_bisect(instance: Instance, patient_id: int) -> float:
    """Infimum winning valuation for one patient, by bisection.

    Probes rerun the greedy allocation with the patient's valuation
    replaced. The upper probe ``v_max * sqrt(m) + 1`` outranks every other
    bid, so a finite threshold always exists.
    """
    v_max = max((bid.valuation for bid in instance.bids), default=0.0)
    hi = v_max * math.sqrt(max(instance.num_experts, 1)) + 1.0
    assert _wins_at(instance, patient_id, hi), "a top-ranked bid must always win"
    if _wins_at(instance, patient_id, 0.0):
        return 0.0
    lo = 0.0
    while hi - lo > BISECT_TOL:
        mid = (lo + hi) / 2.0
        if _wins_at(instance, patient_id, mid):
            hi = mid
        else:
            lo = mid
    return hi


def deviation_grid(instance: Instance, patient_id: int) -> list[float]:
    """Candidate misreports covering every outcome-distinct report.

    The patient's slot in the sorted order changes only where its score
    crosses another bid's score, i.e. at ``score(j) * sqrt(|demand(i)|)``
    for each other bid ``j``. The grid takes those thresholds plus the
    bisected critical value, each nudged a hair both ways, the midpoints
    between consecutive distinct thresholds, and the extremes 0 and
    ``2 * v_max``.
    """
    bid_i = instance.bids[patient_id]
    root = math.sqrt(len(bid_i.demand))
    thresholds = {score(b) * root for b in instance.bids if b.patient_id != patient_id}
    thresholds.add(critical_value_bisect(instance, patient_id))
    ordered = sorted(thresholds)
    v_max = max((bid.valuation for bid in instance.bids), default=0.0)
    grid = {0.0, 2.0 * v_max}
    for t in ordered:
        grid.add(t)
        grid.add(max(0.0, t - 1e-6))
        grid.add(t + 1e-6)
    for a, b in zip(ordered, ordered[1:]):
        grid.add((a + b) / 2.0)
    return sorted(grid)


def _outcome_at(instance: Instance, patient_id: int, value: float, rule: str) -> tuple[bool, float]:
    result = run_mechanism(instance.replace(patient_id, valuation=value), rule)
    won = patient_id in result.allocation.winners
    return won, result.payments.charges[patient_id]


def outcome_table(
    instance: Instance, patient_id: int, rule: str, grid: Optional[list[float]] = None
) -> list[tuple[float, bool, float]]:
    """Evaluate (report, won, charge) on the deviation grid.

    The table depends only on the reported value, not on the true value, so
    it can be shared across many hypothetical true values.
    """
    if grid is None:
        grid = deviation_grid(instance, patient_id)
    return [(v, *_outcome_at(instance, patient_id, v, rule)) for v in grid]


def deviation_search(
    instance: Instance,
    patient_id: int,
    true_value: float,
    rule: str,
    outcomes: Optional[list[tuple[float, bool, float]]] = None,
) -> DeviationReport:
    """Best misreport for one patient with the given true value.

    Utilities are evaluated against ``true_value`` while the reported
    valuation sweeps the threshold grid; other bids stay fixed. A
    precomputed ``outcome_table`` may be passed in when scanning many true
    values for the same patient.
    """
    if outcomes is None:
        outcomes = outcome_table(instance, patient_id, rule)
    won, charge = _outcome_at(instance, patient_id, true_value, rule)
    truthful = utility(true_value, won, charge)
    best_value = true_value
    best_utility = truthful
    for v, won, charge in outcomes:
        u = utility(true_value, won, charge)
        if u > best_utility + UTILITY_TOL:
            best_value = v
            best_utility = u
    return DeviationReport(
        patient_id=patient_id,
        true_value=true_value,
        best_deviation_value=best_value,
        truthful_utility=truthful,
        best_deviation_utility=best_utility,
        violation=best_utility > truthful + UTILITY_TOL,
    )
