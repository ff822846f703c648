"""Offspring-law arithmetic for supercritical Galton-Watson trees with leaves.

A law is a finite pmf ``{k: p_k}``.  From it we derive the extinction
probability ``q``, the law of the root's child count for the tree conditioned
to survive, the subcritical law of trap vertices (coefficients of
``f(q s) / q``) and the joint law of (children, surviving children) used to
grow the backbone.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from fractions import Fraction
from typing import Mapping

import numpy as np

PMF_TOL = 1e-12
Q_TOL = 1e-14
Q_MAX_ITER = 10**6

REGIMES = ("recurrent", "ballistic_clt", "ballistic_no_clt", "sub_ballistic")


class LawError(ValueError):
    """Offspring law is malformed or unsuitable for the requested operation."""


@dataclass(frozen=True)
class OffspringLaw:
    pmf: Mapping[int, float]

    def __post_init__(self):
        clean = {}
        for k, p in self.pmf.items():
            k = int(k)
            p = float(p)
            if k < 0:
                raise LawError(f"negative offspring count {k}")
            if not (p >= 0.0) or math.isinf(p):
                raise LawError(f"invalid probability {p!r} at k={k}")
            if p > 0.0:
                clean[k] = clean.get(k, 0.0) + p
        total = math.fsum(clean.values())
        if abs(total - 1.0) > PMF_TOL:
            raise LawError(f"probabilities sum to {total!r}, not 1 (tolerance {PMF_TOL})")
        object.__setattr__(self, "pmf", dict(sorted(clean.items())))

    @property
    def support(self) -> np.ndarray:
        return np.fromiter(self.pmf.keys(), dtype=np.int64)

    @property
    def probs(self) -> np.ndarray:
        return np.fromiter(self.pmf.values(), dtype=np.float64)

    @property
    def mean(self) -> float:
        return math.fsum(k * p for k, p in self.pmf.items())

    @property
    def max_k(self) -> int:
        return max(self.pmf)

    def cdf_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Support and cumulative probabilities, last entry forced to 1."""
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        return self.support, cdf


@dataclass(frozen=True)
class DerivedLaws:
    law: OffspringLaw
    q: float
    mu: float
    fprime_q: float
    conditioned: OffspringLaw
    trap: OffspringLaw | None
    backbone_joint: Mapping[tuple[int, int], float] = field(repr=False)

    @property
    def trap_empty(self) -> bool:
        return self.trap is None

    def joint_table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(total, surviving, cdf) arrays for inverse-CDF draws from the joint law."""
        return self._joint_table

    @cached_property
    def _joint_table(self):
        items = sorted(self.backbone_joint.items())
        k = np.array([kj[0] for kj, _ in items], dtype=np.int64)
        j = np.array([kj[1] for kj, _ in items], dtype=np.int64)
        cdf = np.cumsum([p for _, p in items])
        cdf[-1] = 1.0
        return k, j, cdf

    def trap_table(self) -> tuple[np.ndarray, np.ndarray]:
        return self._trap_table

    @cached_property
    def _trap_table(self):
        if self.trap is None:
            return np.zeros(1, dtype=np.int64), np.ones(1)
        return self.trap.cdf_table()


@dataclass(frozen=True)
class RegimeReport:
    beta: float
    regime: str
    thresholds: tuple[float, float, float]


def pgf_eval(law: OffspringLaw, s: float, order: int = 0) -> float:
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s={s!r} outside [0, 1]")
    if order == 0:
        return math.fsum(p * s**k for k, p in law.pmf.items())
    if order == 1:
        return math.fsum(k * p * s ** (k - 1) for k, p in law.pmf.items() if k > 0)
    raise ValueError(f"order must be 0 or 1, got {order!r}")


def extinction_probability(law: OffspringLaw) -> float:
    """Smallest root of ``f(s) = s`` in [0, 1].

    Iterating ``s <- f(s)`` from 0 climbs monotonically to the smallest root.
    Near-critical laws converge slowly, so if the iteration stalls we bisect
    on ``f(s) - s``, which is positive on [0, q) and negative on (q, 1).
    """
    if law.pmf.get(0, 0.0) == 0.0:
        return 0.0
    if law.mean <= 1.0:
        return 1.0
    s = 0.0
    for _ in range(Q_MAX_ITER):
        nxt = pgf_eval(law, s)
        if abs(nxt - s) < Q_TOL:
            return _newton_polish(law, nxt)
        s = nxt
    lo = s
    hi = next(
        x for x in (1.0 - 2.0**-m for m in range(1, 53))
        if x > lo and pgf_eval(law, x) < x
    )
    while hi - lo > Q_TOL:
        mid = 0.5 * (lo + hi)
        if pgf_eval(law, mid) > mid:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _newton_polish(law: OffspringLaw, s: float) -> float:
    # f'(q) < 1 at the smallest root, so Newton on f(s) - s is well conditioned
    for _ in range(3):
        step = (pgf_eval(law, s) - s) / (pgf_eval(law, s, order=1) - 1.0)
        nxt = min(max(s - step, 0.0), 1.0)
        if abs(pgf_eval(law, nxt) - nxt) > abs(pgf_eval(law, s) - s):
            break
        s = nxt
    return s


def derive_laws(law: OffspringLaw) -> DerivedLaws:
    mu = law.mean
    if mu <= 1.0:
        raise LawError(f"mean offspring {mu!r} <= 1; supercritical law required")
    q = extinction_probability(law)
    fq = pgf_eval(law, q, order=1)

    conditioned = {}
    joint = {}
    for k, p in law.pmf.items():
        if k == 0:
            continue
        mass = p * (1.0 - q**k) / (1.0 - q)
        if mass > 0.0:
            conditioned[k] = mass
        for j in range(1, k + 1):
            w = p * math.comb(k, j) * (1.0 - q) ** j * q ** (k - j) / (1.0 - q)
            if w > 0.0:
                joint[(k, j)] = w
    _renormalize(conditioned)
    _renormalize(joint)

    trap = None
    if q > 0.0:
        trap_pmf = {k: p * q ** (k - 1) for k, p in law.pmf.items()}
        _renormalize(trap_pmf)
        trap = OffspringLaw(trap_pmf)
    return DerivedLaws(
        law=law,
        q=q,
        mu=mu,
        fprime_q=fq,
        conditioned=OffspringLaw(conditioned),
        trap=trap,
        backbone_joint=joint,
    )


def _renormalize(d: dict) -> None:
    # absorbs the ~1e-16 rounding left by q; anything larger is a real defect
    total = math.fsum(d.values())
    if abs(total - 1.0) > 1e-9:
        raise LawError(f"derived law has mass {total!r}")
    for key in d:
        d[key] /= total


def thresholds(derived: DerivedLaws) -> tuple[float, float, float]:
    """(1/mu, f'(q)^(-1/2), 1/f'(q)).

    The upper two come from the traps; with p_0 = 0 there are none (f'(q) is
    then p_1, which governs nothing) and both are infinite.
    """
    fq = derived.fprime_q
    inf = math.inf
    if derived.trap is None or fq <= 0:
        return 1.0 / derived.mu, inf, inf
    return 1.0 / derived.mu, fq**-0.5, 1.0 / fq


def classify_regime(derived: DerivedLaws, beta: float) -> RegimeReport:
    if not beta > 0.0:
        raise ValueError(f"beta must be positive, got {beta!r}")
    lo, clt, ball = thresholds(derived)
    # ties go to the slower regime
    if beta <= lo:
        regime = "recurrent"
    elif beta < clt:
        regime = "ballistic_clt"
    elif beta < ball:
        regime = "ballistic_no_clt"
    else:
        regime = "sub_ballistic"
    return RegimeReport(beta=beta, regime=regime, thresholds=(lo, clt, ball))


def sample_discrete(table, u: float):
    """Inverse-CDF draw.

    ``table`` is an :class:`OffspringLaw` (returns k) or a mapping keyed by
    (k, j) pairs such as ``DerivedLaws.backbone_joint`` (returns the pair).
    Atoms are visited in ascending key order.
    """
    items = sorted(table.pmf.items()) if isinstance(table, OffspringLaw) else sorted(table.items())
    acc = 0.0
    for key, p in items:
        acc += p
        if u < acc:
            return key
    return items[-1][0]


def parse_probability(x) -> float:
    if isinstance(x, str):
        return float(Fraction(x.strip()))
    return float(x)


def law_from_pairs(pairs) -> OffspringLaw:
    """Build a law from ``[(k, p), ...]`` with p a number or a string like "3/4"."""
    pmf: dict[int, float] = {}
    exact = []
    for k, p in pairs:
        k = int(k)
        if k in pmf:
            raise LawError(f"offspring count {k} listed twice")
        pmf[k] = parse_probability(p)
        exact.append(p)
    if exact and all(isinstance(p, str) for p in exact):
        total = sum(Fraction(p.strip()) for p in exact)
        if total != 1:
            raise LawError(f"probabilities sum to {total}, not 1")
    return OffspringLaw(pmf)


def load_law(source) -> OffspringLaw:
    """Law from a JSON string, a list of (k, p) pairs, a {k: p} mapping, or a
    dict holding one of those under ``law``."""
    if isinstance(source, str):
        source = json.loads(source)
    if isinstance(source, dict):
        source = source["law"] if "law" in source else [[int(k), p] for k, p in source.items()]
    return law_from_pairs(source)


BINARY = OffspringLaw({0: 0.25, 2: 0.75})
