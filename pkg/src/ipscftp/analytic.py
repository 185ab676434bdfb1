"""Closed-form growth parameters, convergence and correlation bounds.

All quantities here are functions of seven aggregate rates of a coupling
spec: the center rate, and the lock / block / combined rates of each
side.  The growth parameter has an exact closed form built from the
per-stage statistics of the backward scan; the same statistics can be
sampled directly from their conditional-distribution tree, which gives an
independent cross-check of stream-level simulation.

Total-variation bounds are clamped to [0, 1] before being reported, and
0**0 counts as 1 while 0 to a negative power clamps to 1, matching the
limit behavior of the bounds as the growth parameter goes to 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Literal, Mapping, NamedTuple

import numpy as np

from .coupling import CouplingSpec
from .errors import DegenerateRates, SupercriticalInput
from .rulesys import Rule, RuleSet


class RateSummary(NamedTuple):
    """Aggregate rates of a coupling spec.

    r0 center; r1/r2/r3 right lock, block and their union; r4/r5/r6 the
    same for the left side.  r3 == r1 + r2 and r6 == r4 + r5 exactly.
    """

    r0: float
    r1: float
    r2: float
    r3: float
    r4: float
    r5: float
    r6: float


Membership = Literal["plain", "right_block", "left_block"]


def rate_summary(rs: RuleSet, spec: CouplingSpec) -> RateSummary:
    r0 = rs.total_rate(spec.center)
    r1 = rs.total_rate(spec.right_lock)
    r2 = rs.total_rate(spec.right_block)
    r4 = rs.total_rate(spec.left_lock)
    r5 = rs.total_rate(spec.left_block)
    return RateSummary(r0, r1, r2, r1 + r2, r4, r5, r4 + r5)


def membership_of(spec: CouplingSpec, i: int) -> Membership:
    """How ambiguous rule i interacts with the side unions of the scan."""
    if i in spec.right_block:
        return "right_block"
    if i in spec.left_block:
        return "left_block"
    return "plain"


def close_probability(s: RateSummary) -> float:
    """Chance that one backward-scan stage closes a window: r1*r4/(r3*r6)."""
    if s.r3 <= 0 or s.r6 <= 0:
        raise DegenerateRates("a side union rate is zero")
    return (s.r1 * s.r4) / (s.r3 * s.r6)


def _swap_sides(s: RateSummary) -> RateSummary:
    return RateSummary(s.r0, s.r4, s.r5, s.r6, s.r1, s.r2, s.r3)


def expected_stage_events(rule, s: RateSummary, membership: Membership = "plain") -> float:
    """Expected number of one rule's events, over its three window sites,
    within the span of a single backward-scan stage.

    ``rule`` may be a Rule or a bare rate.  When the rule itself belongs
    to a side block set, its events cannot appear in the stretches that
    the scan has certified clean on that side, which changes the segment
    intensities; the two block memberships give the same expectation by
    left/right symmetry.
    """
    r = rule.rate if isinstance(rule, Rule) else float(rule)
    if s.r0 <= 0 or s.r3 <= 0 or s.r6 <= 0:
        raise DegenerateRates("stage expectation needs positive r0, r3, r6")
    if membership == "left_block":
        s = _swap_sides(s)
    if membership == "plain":
        return 3.0 * r * (1.0 / s.r0 + (1.0 + s.r1 / s.r6 + s.r4 / s.r3) / (s.r3 + s.r6))
    return r * (3.0 / s.r0 + (2.0 + 3.0 * s.r1 / s.r6 + 3.0 * s.r4 / s.r3) / (s.r3 + s.r6))


def growth_closed_form(rs: RuleSet, spec: CouplingSpec) -> float:
    """Exact growth parameter: expected influence points per window.

    Sum over ambiguous rules of (context size) x (expected events per
    stage), divided by the per-stage close probability.
    """
    s = rate_summary(rs, spec)
    p = close_probability(s)
    if p <= 0:
        raise DegenerateRates("close probability is zero (a lock rate vanishes)")
    total = 0.0
    for i in spec.ambiguous:
        rule = rs.rules[i]
        if rule.rate == 0.0 or not rule.offsets:
            continue
        total += len(rule.offsets) * expected_stage_events(rule, s, membership_of(spec, i))
    return total / p


def growth_upper_bound(rs: RuleSet, spec: CouplingSpec) -> float:
    """Upper bound on the growth parameter, linear in the ambiguous rates."""
    s = rate_summary(rs, spec)
    if s.r0 <= 0 or s.r1 <= 0 or s.r4 <= 0:
        raise DegenerateRates("upper bound needs positive r0, r1, r4")
    factor = (s.r3 * s.r6) / (s.r1 * s.r4) * (
        1.0 / s.r0 + (1.0 + s.r1 / s.r6 + s.r4 / s.r3) / (s.r3 + s.r6)
    )
    weight = sum(rs.rules[i].rate * len(rs.rules[i].offsets) for i in spec.ambiguous)
    return 3.0 * factor * weight


def _clamp01(v: float) -> float:
    return min(max(v, 0.0), 1.0)


def _power(base: float, exponent: float) -> float:
    """base**exponent with 0**0 := 1 and 0**negative treated as +inf."""
    if base == 0.0:
        if exponent == 0.0:
            return 1.0
        return math.inf if exponent < 0 else 0.0
    return base**exponent


def convergence_bound(
    card_b: int,
    t: float,
    m: float,
    lt_profile: Mapping[float, float],
    lh_profile: Mapping[float, float],
    n_max: int = 50,
    lam_grid: Iterable[float] | None = None,
) -> float:
    """Total-variation bound between the chain at time t and equilibrium,
    for a site set of size card_b.

    ``lt_profile`` maps lambda to the coupling-time transform E[exp(-lam T)]
    and ``lh_profile`` to the influence transform; both must cover the
    grid.  The inner sum over resolution depths runs k = 0..n-1.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    grid = sorted(lam_grid) if lam_grid is not None else sorted(set(lt_profile) & set(lh_profile))
    if not grid:
        raise ValueError("empty lambda grid")

    def inner(k: int) -> float:
        return min(
            _power(lh_profile[lam], k) * lt_profile[lam] * math.exp(-lam * t) for lam in grid
        )

    best = math.inf
    tail = 0.0
    for n in range(0, n_max + 1):
        best = min(best, _power(m, n) + tail)
        tail += inner(n)
    return _clamp01(card_b * best)


def pair_correlation_bound(m: float, distance: float, a_minus: int = 2, a_plus: int = 2) -> float:
    """Bound on the total-variation gap between the equilibrium pair law at
    the given distance and the product of its marginals."""
    if not (0 <= m < 1):
        raise SupercriticalInput(f"growth parameter {m} must be in [0, 1)")
    if distance < 1 or a_minus < 1 or a_plus < 1:
        raise ValueError("need distance >= 1 and widths >= 1")
    kappa = distance / (a_minus + a_plus)
    return _clamp01(2.0 * _power(m, kappa - 1.0))


def half_line_correlation_bound(m: float, gap: float, a_minus: int = 2, a_plus: int = 2) -> float:
    """Bound on the equilibrium dependence between the sites left of 0 and
    the sites right of ``gap``."""
    if not (0 <= m < 1):
        raise SupercriticalInput(f"growth parameter {m} must be in [0, 1)")
    if gap < 1 or a_minus < 1 or a_plus < 1:
        raise ValueError("need gap >= 1 and widths >= 1")
    kappa = gap / (a_minus + a_plus)
    denom = (1.0 - _power(m, 1.0 / a_minus)) * (1.0 - _power(m, 1.0 / a_plus))
    if denom == 0.0:
        return 1.0
    series = 1.0 / (1.0 - _power(m, 1.0 / a_minus)) + 1.0 / (1.0 - _power(m, 1.0 / a_plus))
    return _clamp01(_power(m, kappa - 1.0) * series)


def jc_cpg_thresholds(delta) -> tuple[Fraction, float]:
    """Subcriticality thresholds on the perturbation magnitude for the
    uniform-rates model with CG-dinucleotide decay ``delta``.

    The first threshold is exact: 64 / (3 (40 + 10 delta + delta^2)).
    The second does not depend on delta and is the positive root of
    3 e (64 + 12 e + e^2) = 64, found by bisection to residual 1e-12.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    d = Fraction(delta)
    eps_context = Fraction(64, 1) / (3 * (40 + 10 * d + d * d))

    def cubic(e: float) -> float:
        return 3.0 * e * (64.0 + 12.0 * e + e * e) - 64.0

    lo, hi = 0.0, 1.0
    mid = 0.5
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        v = cubic(mid)
        if abs(v) <= 1e-12:
            break
        if v > 0:
            hi = mid
        else:
            lo = mid
    return eps_context, mid


class TreeTrace(NamedTuple):
    """One sampled backward-scan stage drawn from its conditional tree."""

    t_center: float    # first center event below the stage start
    t_side: float      # nearest side event below the center candidate
    t_opposite: float  # opposite-side event ending the stage
    closed: bool       # whether the stage closed a coupling window
    rule_events: int   # events of the tracked rule within the stage span


def tree_trace_sample(
    s: RateSummary,
    rule,
    membership: Membership,
    rng: np.random.Generator,
) -> TreeTrace:
    """Draw one scan stage from the tree of conditional distributions.

    Holding times are exponentials in the aggregate rates, branch choices
    are rate-proportional, and the tracked rule's event count is Poisson
    on each time segment with the segment's printed intensity (the
    intensity drops on stretches that the scan certifies free of the
    rule's own side union when the rule belongs to a block set).
    """
    r = rule.rate if isinstance(rule, Rule) else float(rule)
    if r < 0:
        raise ValueError("rule rate must be nonnegative")
    if s.r0 <= 0 or s.r3 <= 0 or s.r6 <= 0:
        raise DegenerateRates("tree sampling needs positive r0, r3, r6")
    if membership == "left_block":
        s = _swap_sides(s)
    in_block = membership != "plain"

    t_center = -rng.exponential(1.0 / s.r0)
    count = int(rng.poisson(3.0 * r * (-t_center)))
    gap1 = rng.exponential(1.0 / (s.r3 + s.r6))
    t_side = t_center - gap1
    count += int(rng.poisson((r if in_block else 3.0 * r) * gap1))

    if rng.random() < s.r3 / (s.r3 + s.r6):
        # Side event on the block-bearing side.
        if rng.random() < s.r1 / s.r3:
            gap2 = rng.exponential(1.0 / s.r6)
            t_opposite = t_side - gap2
            count += int(rng.poisson(3.0 * r * gap2))
            closed = rng.random() < s.r4 / s.r6
        else:
            t_opposite, closed = t_side, False
            if in_block and s.r2 > 0 and rng.random() < r / s.r2:
                count += 1
    else:
        if rng.random() < s.r4 / s.r6:
            gap2 = rng.exponential(1.0 / s.r3)
            t_opposite = t_side - gap2
            count += int(rng.poisson((2.0 * r if in_block else 3.0 * r) * gap2))
            closed = rng.random() < s.r1 / s.r3
            if in_block and not closed and s.r2 > 0 and rng.random() < r / s.r2:
                count += 1
        else:
            t_opposite, closed = t_side, False
    return TreeTrace(t_center, t_side, t_opposite, closed, count)


@dataclass
class BoundReport:
    """Everything the certification command reports for one model."""

    growth: float | None
    growth_bound: float | None
    convergence: list[tuple[float, float]]
    pair: list[tuple[float, float]]
    half_line: list[tuple[float, float]]
    thresholds: tuple[Fraction, float] | None = None
