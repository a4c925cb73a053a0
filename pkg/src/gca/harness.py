"""Seeded instance generation and batch property fuzzing.

The fuzzer replays the mechanism over reproducible random instances and
aggregates evidence for the properties a truthful greedy auction should
have: individual rationality, incentive compatibility under the critical
rule, allocation monotonicity, and the welfare approximation bound.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .mechanism import (
    RULE_CRITICAL,
    RULE_LITERAL,
    RULES,
    Bid,
    Instance,
    run_mechanism,
)
from .oracle import DeviationReport, deviation_search, optimal_welfare, outcome_table

__all__ = [
    "GenParams",
    "FuzzReport",
    "PROPERTY_NAMES",
    "gen_random_instance",
    "draw_corpus_params",
    "check_ic",
    "check_monotonicity",
    "check_approx_ratio",
    "run_batch",
    "bench_scaling",
]

PROPERTY_NAMES = ("ic", "ir", "mono", "ratio")

CHARGE_TOL = 1e-9
RATIO_TOL = 1e-9


@dataclass(frozen=True)
class GenParams:
    """Knobs for one random instance draw."""

    n: int
    m: int
    max_bundle: int
    valuation_range: tuple[float, float]
    seed: int

    def __post_init__(self) -> None:
        lo, hi = self.valuation_range
        if self.n < 0:
            raise ValueError(f"n must be >= 0, got {self.n}")
        if not (1 <= self.max_bundle <= self.m):
            raise ValueError(f"need 1 <= max_bundle <= m, got max_bundle={self.max_bundle}, m={self.m}")
        if lo < 0 or hi <= lo:
            raise ValueError(f"need 0 <= lo < hi, got [{lo}, {hi}]")


def gen_random_instance(params: GenParams) -> Instance:
    """Deterministic random instance for a seed.

    Each patient draws a bundle size uniform in [1, max_bundle], a bundle
    without replacement from the expert pool, and a valuation uniform in
    the given range rounded to 6 decimals (keeps accidental score ties
    rare without changing the score scale).
    """
    rng = np.random.default_rng(params.seed)
    lo, hi = params.valuation_range
    bids = []
    for i in range(params.n):
        k = int(rng.integers(1, params.max_bundle + 1))
        demand = frozenset(int(e) for e in rng.choice(params.m, size=k, replace=False))
        valuation = round(float(rng.uniform(lo, hi)), 6)
        bids.append(Bid(i, demand, valuation))
    return Instance(params.m, tuple(bids))


def draw_corpus_params(
    seed: int,
    n_max: int,
    m_max: int,
    valuation_range: tuple[float, float] = (0.0, 10.0),
) -> GenParams:
    """Per-seed shape draw for a fuzz corpus: n in [1, n_max], m in [2, m_max].

    The shape draw uses a stream distinct from the instance's own, so the
    bundle and valuation draws do not overlap it.
    """
    if n_max < 1 or m_max < 2:
        raise ValueError(f"need n_max >= 1 and m_max >= 2, got n_max={n_max}, m_max={m_max}")
    rng = np.random.default_rng([seed, 0])
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(2, m_max + 1))
    max_bundle = int(rng.integers(1, m + 1))
    return GenParams(n=n, m=m, max_bundle=max_bundle, valuation_range=valuation_range, seed=seed)


def check_ic(
    instance: Instance, rule: str, trials_per_patient: int = 5
) -> list[DeviationReport]:
    """Deviation-search every patient at a grid of hypothetical true values.

    True values span [0, 2 * v_max] evenly. Returns one report per
    (patient, true value) pair.
    """
    v_max = max((b.valuation for b in instance.bids), default=0.0)
    if trials_per_patient < 2:
        true_values = [v_max]
    else:
        step = 2.0 * v_max / (trials_per_patient - 1)
        true_values = [step * k for k in range(trials_per_patient)]
    reports = []
    for i in range(instance.num_patients):
        outcomes = outcome_table(instance, i, rule)
        for t in true_values:
            reports.append(deviation_search(instance, i, t, rule, outcomes=outcomes))
    return reports


def check_monotonicity(instance: Instance, samples: int = 3, seed: int = 0) -> list[dict]:
    """Winners must keep winning after a bid raise or a demand shrink.

    For each winner: raise the valuation by 1.1x and 10x, and try up to
    ``samples`` random non-empty strict subsets of its demand at the same
    valuation. Returns one record per violation (empty list when clean).
    """
    allocation = run_mechanism(instance, RULE_LITERAL).allocation
    rng = np.random.default_rng([seed, 1])
    violations = []
    for i in sorted(allocation.winners):
        bid = instance.bids[i]
        for factor in (1.1, 10.0):
            modified = instance.replace(i, valuation=bid.valuation * factor)
            if i not in run_mechanism(modified, RULE_LITERAL).allocation.winners:
                violations.append({"patient": i, "kind": "raise", "factor": factor})
        demand = sorted(bid.demand)
        if len(demand) < 2:
            continue
        for _ in range(samples):
            k = int(rng.integers(1, len(demand)))
            subset = frozenset(int(e) for e in rng.choice(demand, size=k, replace=False))
            modified = instance.replace(i, demand=subset)
            if i not in run_mechanism(modified, RULE_LITERAL).allocation.winners:
                violations.append({"patient": i, "kind": "shrink", "subset": sorted(subset)})
    return violations


def check_approx_ratio(instance: Instance) -> float:
    """Greedy welfare over brute-force optimal welfare; 1.0 when OPT is 0."""
    greedy_welfare = run_mechanism(instance, RULE_LITERAL).welfare
    opt = optimal_welfare(instance)
    if opt.opt_welfare == 0.0:
        return 1.0
    return greedy_welfare / opt.opt_welfare


def _ratio_bound(m: int) -> float:
    return 1.0 / math.sqrt(m) if m > 0 else 0.0


def _ir_violations(instance: Instance, charges: Sequence[float], winners: frozenset[int]) -> list[dict]:
    out = []
    for i, bid in enumerate(instance.bids):
        if i in winners:
            if charges[i] > bid.valuation + CHARGE_TOL:
                out.append({"patient": i, "kind": "overcharge", "charge": charges[i], "valuation": bid.valuation})
        elif charges[i] != 0.0:
            out.append({"patient": i, "kind": "loser_charged", "charge": charges[i]})
    return out


@dataclass
class FuzzReport:
    """Aggregated evidence from one fuzz batch."""

    instances_run: int = 0
    rule: str = RULE_CRITICAL
    checks: tuple[str, ...] = ()
    violation_counts: dict[str, int] = field(default_factory=dict)
    first_witnesses: dict[str, Optional[dict]] = field(default_factory=dict)
    ratio_min: Optional[float] = None
    rule_divergences: int = 0

    @property
    def total_violations(self) -> int:
        return sum(self.violation_counts.values())

    def to_dict(self) -> dict:
        return {
            "instances_run": self.instances_run,
            "rule": self.rule,
            "checks": list(self.checks),
            "violations": {
                name: {"count": self.violation_counts[name], "first_witness": self.first_witnesses[name]}
                for name in self.checks
            },
            "ratio_min": self.ratio_min,
            "rule_divergences": self.rule_divergences,
        }


def run_batch(
    params_list: Sequence[GenParams],
    properties: Sequence[str] = PROPERTY_NAMES,
    rule: str = RULE_CRITICAL,
    ic_trials: int = 5,
    mono_samples: int = 3,
) -> FuzzReport:
    """Generate, run and check every instance in order; aggregate a report.

    The IC search runs under ``rule``; individual rationality is checked
    under both payment rules; monotonicity depends only on the allocation.
    Divergences between the two payment rules are counted per instance.
    Iteration order is the given params order, so the report is a pure
    function of its arguments.
    """
    from .serialize import write_instance  # local import to avoid a cycle

    if rule not in RULES:
        raise ValueError(f"unknown payment rule {rule!r}; expected one of {RULES}")
    unknown = [p for p in properties if p not in PROPERTY_NAMES]
    if unknown:
        raise ValueError(f"unknown properties {unknown}; expected a subset of {PROPERTY_NAMES}")

    report = FuzzReport(rule=rule, checks=tuple(properties))
    for name in properties:
        report.violation_counts[name] = 0
        report.first_witnesses[name] = None

    def record(name: str, params: GenParams, instance: Instance, detail: dict, count: int = 1) -> None:
        report.violation_counts[name] += count
        if report.first_witnesses[name] is None:
            report.first_witnesses[name] = {
                "seed": params.seed,
                "instance": write_instance(instance),
                "detail": detail,
            }

    for params in params_list:
        instance = gen_random_instance(params)
        report.instances_run += 1

        literal = run_mechanism(instance, RULE_LITERAL)
        critical = run_mechanism(instance, RULE_CRITICAL)
        if any(
            abs(a - b) > CHARGE_TOL
            for a, b in zip(literal.payments.charges, critical.payments.charges)
        ):
            report.rule_divergences += 1

        if "ir" in properties:
            for res in (literal, critical):
                bad = _ir_violations(instance, res.payments.charges, res.allocation.winners)
                if bad:
                    record("ir", params, instance, {"rule": res.rule, "violations": bad}, len(bad))

        if "mono" in properties:
            bad = check_monotonicity(instance, samples=mono_samples, seed=params.seed)
            if bad:
                record("mono", params, instance, {"violations": bad}, len(bad))

        if "ratio" in properties:
            ratio = check_approx_ratio(instance)
            if report.ratio_min is None or ratio < report.ratio_min:
                report.ratio_min = ratio
            if ratio < _ratio_bound(instance.num_experts) - RATIO_TOL:
                record("ratio", params, instance, {"ratio": ratio, "bound": _ratio_bound(instance.num_experts)})

        if "ic" in properties:
            bad_reports = [r for r in check_ic(instance, rule, ic_trials) if r.violation]
            if bad_reports:
                detail = {
                    "reports": [
                        {
                            "patient": r.patient_id,
                            "true_value": r.true_value,
                            "best_deviation_value": r.best_deviation_value,
                            "truthful_utility": r.truthful_utility,
                            "best_deviation_utility": r.best_deviation_utility,
                        }
                        for r in bad_reports
                    ]
                }
                record("ic", params, instance, detail, len(bad_reports))

    return report


def bench_scaling(
    sizes: Sequence[int],
    m: int = 64,
    max_bundle: int = 8,
    seed: int = 0,
    rules: Sequence[str] = RULES,
    repeats: int = 2,
) -> list[dict]:
    """Time allocation plus payment on synthetic instances of growing size.

    Generation time is excluded; each timing is the best of ``repeats``
    runs. Returns one row per size with per-rule wall times in seconds.
    """
    rows = []
    for n in sizes:
        params = GenParams(n=n, m=m, max_bundle=max_bundle, valuation_range=(0.0, 1000.0), seed=seed + n)
        instance = gen_random_instance(params)
        row: dict = {"n": n}
        for rule in rules:
            best = math.inf
            for _ in range(repeats):
                start = time.perf_counter()
                run_mechanism(instance, rule)
                best = min(best, time.perf_counter() - start)
            row[rule] = best
        rows.append(row)
    return rows
