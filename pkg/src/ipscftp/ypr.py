"""Neighbor-dependent nucleotide substitution models (RN + YpR family).

The single-site part of a model is a structured rate matrix in which every
column (target base) carries one rate ``v`` for the two cross-class source
bases and one rate ``w`` for the same-class source.  The neighbor part
flips a base to its class partner (A<->G, C<->T) at a rate triggered by
one neighbor: purines watch their left neighbor, pyrimidines their right.
Perturbations add arbitrary single-site and dinucleotide-context rates on
top, and are flagged so downstream coupling code can treat them as the
ambiguous events.

``compile_rules`` emits the canonical rule list in a fixed, documented
order; zero-rate structural rules are kept so that coupling specs can
always reference them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rulesys import (
    CLASS_PARTNER,
    NUCLEOTIDES,
    PURINES,
    PYRIMIDINES,
    Rule,
    RuleSet,
    base_class,
)

#: Legal (source, triggering neighbor) pairs for the neighbor-flip rates:
#: purine sources pair with pyrimidine left neighbors and vice versa.
YPR_PAIRS = (
    ("C", "A"), ("C", "G"), ("T", "A"), ("T", "G"),  # pyrimidine source, right trigger
    ("A", "C"), ("A", "T"), ("G", "C"), ("G", "T"),  # purine source, left trigger
)


@dataclass(frozen=True)
class RNMatrix:
    """Single-site rates: ``v[x]`` cross-class into x, ``w[x]`` within-class."""

    v: dict[str, float]
    w: dict[str, float]

    def __post_init__(self):
        for table in (self.v, self.w):
            if set(table) != set(NUCLEOTIDES.states):
                raise ValueError("v and w must assign a rate to every base")
            if any(r < 0 for r in table.values()):
                raise ValueError("rates must be nonnegative")

    def rate(self, source: str, target: str) -> float:
        """Off-diagonal entry of the compiled single-site matrix."""
        if source == target:
            raise ValueError("diagonal entry requested")
        if base_class(source) == base_class(target):
            return self.w[target]
        return self.v[target]


@dataclass(frozen=True)
class YpRRates:
    """Neighbor-flip rates keyed by (source base, triggering neighbor)."""

    rates: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        for key, r in self.rates.items():
            if key not in YPR_PAIRS:
                raise ValueError(f"illegal neighbor pair {key!r}")
            if r < 0:
                raise ValueError(f"negative rate for {key!r}")

    def rate(self, source: str, neighbor: str) -> float:
        return self.rates.get((source, neighbor), 0.0)


@dataclass(frozen=True)
class PerturbationSpec:
    """Sparse perturbation rates: single-site and dinucleotide-context."""

    single: dict[tuple[str, str], float] = field(default_factory=dict)
    left_dinuc: dict[tuple[str, str, str], float] = field(default_factory=dict)
    right_dinuc: dict[tuple[str, str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        for (x, y), r in self.single.items():
            if x == y or r < 0:
                raise ValueError(f"bad single perturbation ({x},{y})={r}")
        for (z, x, y), r in self.left_dinuc.items():
            if x == y or r < 0:
                raise ValueError(f"bad dinucleotide perturbation ({z},{x},{y})={r}")
        for (x, y, z), r in self.right_dinuc.items():
            if x == y or r < 0:
                raise ValueError(f"bad dinucleotide perturbation ({x},{y},{z})={r}")

    @property
    def total(self) -> float:
        """Sum of every perturbation rate (the magnitude of the perturbation)."""
        return float(
            sum(self.single.values())
            + sum(self.left_dinuc.values())
            + sum(self.right_dinuc.values())
        )


@dataclass(frozen=True)
class YpRModel:
    rn: RNMatrix
    ypr: YpRRates
    pert: PerturbationSpec = field(default_factory=PerturbationSpec)

    @property
    def perturbation_total(self) -> float:
        return self.pert.total


@dataclass(frozen=True)
class RuleGroups:
    """Indices of each structural rule family in a compiled rule set."""

    uncond: dict[str, int]            # target -> index
    cross: dict[str, int]
    within: dict[str, int]
    right_trigger: dict[tuple[str, str], int]   # (source, right neighbor) -> index
    left_trigger: dict[tuple[str, str], int]    # (source, left neighbor) -> index
    pert: tuple[int, ...]             # all perturbative indices, compile order


def _compile(model: YpRModel) -> tuple[RuleSet, RuleGroups]:
    rules: list[Rule] = []
    flags: list[bool] = []
    uncond, cross, within = {}, {}, {}
    right_trigger, left_trigger = {}, {}

    def add(rule, pert):
        rules.append(rule)
        flags.append(pert)
        return len(rules) - 1

    for x in NUCLEOTIDES.states:
        r = min(model.rn.v[x], model.rn.w[x])
        uncond[x] = add(Rule((), frozenset(), x, r, f"uncond_to_{x}"), False)
    for x in NUCLEOTIDES.states:
        opp = PYRIMIDINES if x in PURINES else PURINES
        r = max(model.rn.v[x] - model.rn.w[x], 0.0)
        pats = frozenset((s,) for s in opp)
        cross[x] = add(Rule((0,), pats, x, r, f"cross_to_{x}"), False)
    for x in NUCLEOTIDES.states:
        same = PURINES if x in PURINES else PYRIMIDINES
        r = max(model.rn.w[x] - model.rn.v[x], 0.0)
        pats = frozenset((s,) for s in same)
        within[x] = add(Rule((0,), pats, x, r, f"within_to_{x}"), False)
    # Pyrimidine sources flip to their partner when the right neighbor matches.
    for x, z in (("C", "A"), ("C", "G"), ("T", "A"), ("T", "G")):
        y = CLASS_PARTNER[x]
        r = model.ypr.rate(x, z)
        tag = f"ypr_{x}{z}_to_{y}{z}"
        right_trigger[(x, z)] = add(Rule((0, 1), frozenset({(x, z)}), y, r, tag), False)
    # Purine sources flip when the left neighbor matches.
    for x, z in (("A", "C"), ("A", "T"), ("G", "C"), ("G", "T")):
        y = CLASS_PARTNER[x]
        r = model.ypr.rate(x, z)
        tag = f"ypr_{z}{x}_to_{z}{y}"
        left_trigger[(x, z)] = add(Rule((-1, 0), frozenset({(z, x)}), y, r, tag), False)

    pert_idx = []
    for (x, y), r in sorted(model.pert.single.items()):
        if r == 0.0:
            continue
        pert_idx.append(add(Rule((0,), frozenset({(x,)}), y, r, f"pert_{x}_to_{y}"), True))
    for (z, x, y), r in sorted(model.pert.left_dinuc.items()):
        if r == 0.0:
            continue
        tag = f"pert_{z}{x}_to_{z}{y}"
        pert_idx.append(add(Rule((-1, 0), frozenset({(z, x)}), y, r, tag), True))
    for (x, y, z), r in sorted(model.pert.right_dinuc.items()):
        if r == 0.0:
            continue
        tag = f"pert_{x}{z}_to_{y}{z}"
        pert_idx.append(add(Rule((0, 1), frozenset({(x, z)}), y, r, tag), True))

    rs = RuleSet(NUCLEOTIDES, tuple(rules), tuple(flags))
    groups = RuleGroups(uncond, cross, within, right_trigger, left_trigger, tuple(pert_idx))
    return rs, groups


def compile_rules(model: YpRModel) -> RuleSet:
    """Emit the canonical rule list for a model.

    Order: 4 unconditional rules, 4 cross-class, 4 within-class, 4
    right-triggered neighbor flips, 4 left-triggered neighbor flips (all
    kept even at rate zero), then every nonzero perturbative rule with
    its flag set.  Alphabet order is A, T, C, G throughout.
    """
    return _compile(model)[0]


def compiled_groups(model: YpRModel) -> RuleGroups:
    """Index map of the structural families in ``compile_rules(model)``."""
    return _compile(model)[1]


def decompose_general_rates(S: np.ndarray) -> tuple[RNMatrix, PerturbationSpec]:
    """Project a general 4x4 substitution-rate matrix onto the structured form.

    Rows are sources and columns targets in alphabet order A, T, C, G.
    For each target the within-class rate is taken verbatim and the
    cross-class rate is the smaller of the two cross entries, so the
    residual is entrywise nonnegative and ``S = structured + residual``
    holds exactly.
    """
    S = np.asarray(S, dtype=float)
    if S.shape != (4, 4):
        raise ValueError("expected a 4x4 matrix in A,T,C,G order")
    if (S[~np.eye(4, dtype=bool)] < 0).any():
        raise ValueError("off-diagonal rates must be nonnegative")
    states = NUCLEOTIDES.states
    idx = {s: i for i, s in enumerate(states)}
    v, w, residual = {}, {}, {}
    for y in states:
        partner = CLASS_PARTNER[y]
        w[y] = float(S[idx[partner], idx[y]])
        cross_sources = [x for x in states if x != y and base_class(x) != base_class(y)]
        entries = {x: float(S[idx[x], idx[y]]) for x in cross_sources}
        v[y] = min(entries.values())
        for x, r in entries.items():
            if r - v[y] > 0.0:
                residual[(x, y)] = r - v[y]
    return RNMatrix(v, w), PerturbationSpec(single=residual)


def jukes_cantor_cpg(delta: float, pert: PerturbationSpec | None = None) -> YpRModel:
    """Uniform single-site model plus CG-dinucleotide decay at rate delta.

    Every base mutates to every other at unit rate; inside a C,G pair the
    C additionally flips to T and the G to A, both at rate ``delta``.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    rn = RNMatrix({x: 1.0 for x in NUCLEOTIDES.states}, {x: 1.0 for x in NUCLEOTIDES.states})
    ypr = YpRRates({("C", "G"): float(delta), ("G", "C"): float(delta)})
    return YpRModel(rn, ypr, pert or PerturbationSpec())


#: Left-position fusing: the two purines become indistinguishable.
_FUSE_LEFT = {"A": "R", "G": "R", "C": "C", "T": "T", "R": "R", "Y": "Y"}
#: Right-position fusing: the two pyrimidines become indistinguishable.
_FUSE_RIGHT = {"C": "Y", "T": "Y", "A": "A", "G": "G", "R": "R", "Y": "Y"}


def fuse_triple(states: tuple[str, str, str]) -> tuple[str, str, str]:
    """Fuse a (left, center, right) triple: purines merge on the left
    position, pyrimidines on the right, the center stays exact."""
    left, center, right = states
    return (_FUSE_LEFT[left], center, _FUSE_RIGHT[right])
