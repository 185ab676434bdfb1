"""Alphabets, transition rules, window configurations and an exact oracle.

A rule fires at a site when the states read at ``site + offsets`` form a
tuple in its pattern set; an empty offset list means the rule is always
applicable.  A rule set is an indexed list of rules together with a
perturbative / non-perturbative flag per index; duplicate (context, rate)
pairs at distinct indices are allowed and act additively.

``exact_stationary`` builds the dense generator of a small window and
solves for its stationary vector.  It exists for desk-scale verification
only and refuses state spaces larger than ~4096 configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateChain

MAX_ORACLE_SIDE = 4096


@dataclass(frozen=True)
class Alphabet:
    """Ordered finite state space; each label gets a stable integer index."""

    states: tuple[str, ...]

    def __post_init__(self):
        if len(self.states) < 2:
            raise ValueError("alphabet needs at least 2 states")
        if len(set(self.states)) != len(self.states):
            raise ValueError("alphabet labels must be unique")

    @property
    def size(self) -> int:
        return len(self.states)

    def index(self, state: str) -> int:
        return self.states.index(state)

    def __contains__(self, state) -> bool:
        return state in self.states


#: The nucleotide alphabet used by the substitution models.  A and G are
#: purines, C and T pyrimidines.
NUCLEOTIDES = Alphabet(("A", "T", "C", "G"))

PURINES = ("A", "G")
PYRIMIDINES = ("C", "T")

#: Partner within the same base class (purine<->purine, pyrimidine<->pyrimidine).
CLASS_PARTNER = {"A": "G", "G": "A", "C": "T", "T": "C"}


def base_class(state: str) -> str:
    """'R' for purines, 'Y' for pyrimidines."""
    return "R" if state in PURINES else "Y"


@dataclass(frozen=True)
class Rule:
    """One transition rule: offsets, pattern set, target state and rate.

    ``offsets`` lists the sites read relative to the site being updated;
    ``patterns`` holds the state tuples (of length ``len(offsets)``) that
    allow the rule to fire.  An empty offset list with an empty pattern
    set is the always-compatible rule.  ``tag`` is a free-form label used
    for display and for selecting rule groups when building coupling
    specs; it carries no semantics of its own.
    """

    offsets: tuple[int, ...]
    patterns: frozenset[tuple[str, ...]]
    target: str
    rate: float
    tag: str = ""

    @property
    def arity(self) -> int:
        """Number of context sites this rule reads (0 for unconditional rules)."""
        return len(self.offsets)

    def __repr__(self):
        name = self.tag or "rule"
        return f"Rule({name}: A={list(self.offsets)} -> {self.target} @ {self.rate:g})"


@dataclass(frozen=True)
class RuleSet:
    """Indexed list of rules with a perturbative flag per index."""

    alphabet: Alphabet
    rules: tuple[Rule, ...]
    perturbative: tuple[bool, ...]

    def __post_init__(self):
        if len(self.rules) != len(self.perturbative):
            raise ValueError("perturbative flags must match the rule list length")

    def __len__(self):
        return len(self.rules)

    @property
    def perturbative_indices(self) -> tuple[int, ...]:
        return tuple(i for i, p in enumerate(self.perturbative) if p)

    @property
    def core_indices(self) -> tuple[int, ...]:
        return tuple(i for i, p in enumerate(self.perturbative) if not p)

    def total_rate(self, indices: Iterable[int]) -> float:
        return float(sum(self.rules[i].rate for i in indices))


@dataclass(frozen=True)
class Frozen:
    """Boundary that reads a fixed state on each side of the window."""

    left: str
    right: str


@dataclass(frozen=True)
class Periodic:
    """Boundary that wraps site reads modulo the window width."""


Boundary = Union[Frozen, Periodic]


@dataclass
class WindowConfig:
    """States on a contiguous site interval plus a boundary convention."""

    low: int
    high: int  # inclusive
    states: dict[int, str]
    boundary: Boundary = field(default_factory=lambda: Frozen("A", "A"))

    def __post_init__(self):
        for x in range(self.low, self.high + 1):
            if x not in self.states:
                raise ValueError(f"site {x} has no state")

    @property
    def width(self) -> int:
        return self.high - self.low + 1

    def state_at(self, x: int) -> str:
        """State read at any site, resolving the boundary outside the window."""
        if self.low <= x <= self.high:
            return self.states[x]
        if isinstance(self.boundary, Periodic):
            return self.states[self.low + (x - self.low) % self.width]
        return self.boundary.left if x < self.low else self.boundary.right

    def copy(self) -> "WindowConfig":
        return WindowConfig(self.low, self.high, dict(self.states), self.boundary)

    @classmethod
    def uniform(cls, low, high, state, boundary=None) -> "WindowConfig":
        b = boundary if boundary is not None else Frozen(state, state)
        return cls(low, high, {x: state for x in range(low, high + 1)}, b)


@dataclass
class ValidationReport:
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_rule_set(rs: RuleSet) -> ValidationReport:
    """Check structural invariants; violations are reported, never raised."""
    out = []
    for i, rule in enumerate(rs.rules):
        where = f"rule {i} ({rule.tag or 'unnamed'})"
        if rule.rate < 0:
            out.append(f"{where}: negative rate {rule.rate!r}")
        if len(set(rule.offsets)) != len(rule.offsets):
            out.append(f"{where}: duplicate offsets {rule.offsets!r}")
        if rule.target not in rs.alphabet:
            out.append(f"{where}: target {rule.target!r} not in alphabet")
        if not rule.offsets and rule.patterns:
            out.append(f"{where}: empty offsets but nonempty patterns")
        for pat in rule.patterns:
            if len(pat) != len(rule.offsets):
                out.append(f"{where}: pattern arity {len(pat)} != {len(rule.offsets)}")
            elif any(s not in rs.alphabet for s in pat):
                out.append(f"{where}: pattern {pat!r} uses unknown states")
    return ValidationReport(out)


def compatible(rule: Rule, cfg: WindowConfig, x: int) -> bool:
    """True iff the rule may fire at site x under cfg's boundary resolution.

    Rules with no context sites are compatible with every configuration.
    """
    if not rule.offsets:
        return True
    read = tuple(cfg.state_at(x + a) for a in rule.offsets)
    return read in rule.patterns


def _build_generator(rs: RuleSet, n_sites: int, boundary: Boundary) -> np.ndarray:
    """Dense generator matrix of the window chain, row = source config."""
    k = rs.alphabet.size
    n_conf = k**n_sites
    states = rs.alphabet.states
    Q = np.zeros((n_conf, n_conf))

    def read(conf, pos):
        # conf is a tuple of state indices over window positions 0..n_sites-1
        if 0 <= pos < n_sites:
            return states[conf[pos]]
        if isinstance(boundary, Periodic):
            return states[conf[pos % n_sites]]
        return boundary.left if pos < 0 else boundary.right

    # Configs enumerated in base-k order, leftmost site most significant.
    confs = list(np.ndindex(*([k] * n_sites)))
    for ci, conf in enumerate(confs):
        for pos in range(n_sites):
            for rule in rs.rules:
                if rule.rate == 0.0:
                    continue
                tgt = rs.alphabet.index(rule.target)
                if conf[pos] == tgt:
                    continue  # no-op transition contributes nothing
                if rule.offsets:
                    pat = tuple(read(conf, pos + a) for a in rule.offsets)
                    if pat not in rule.patterns:
                        continue
                nxt = list(conf)
                nxt[pos] = tgt
                cj = 0
                for v in nxt:
                    cj = cj * k + v
                Q[ci, cj] += rule.rate
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def exact_stationary(rs: RuleSet, n_sites: int, boundary: Boundary) -> np.ndarray:
    """Stationary probability vector of the window chain, dense solve.

    Configurations are indexed in base-|alphabet| order with the leftmost
    site most significant.  Raises DegenerateChain when the chain has more
    than one closed communicating class (for instance when all rates are
    zero), since the stationary vector is then not unique.
    """
    k = rs.alphabet.size
    if k**n_sites > MAX_ORACLE_SIDE:
        raise ValueError(
            f"{k}**{n_sites} configurations exceed the dense-solve cap {MAX_ORACLE_SIDE}"
        )
    Q = _build_generator(rs, n_sites, boundary)
    n = Q.shape[0]

    adj = sp.csr_matrix((np.abs(Q) > 0).astype(np.int8))
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    # A class is closed when no positive rate leaves it.
    closed = 0
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        off = Q[np.ix_(members, np.setdiff1d(np.arange(n), members))]
        if off.size == 0 or not (off > 0).any():
            closed += 1
    if closed != 1:
        raise DegenerateChain(f"{closed} closed communicating classes (need exactly 1)")

    # Solve pi Q = 0 with sum(pi) = 1 by replacing one balance equation.
    M = Q.T.copy()
    M[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(M, b)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    resid = float(np.max(np.abs(pi @ Q)))
    if resid > 1e-10:
        raise DegenerateChain(f"stationary solve residual {resid:g} too large")
    return pi
