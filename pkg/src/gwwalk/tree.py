"""Lazily generated conditioned Galton-Watson trees and finite auxiliary trees.

The infinite tree is never built.  A vertex is addressed by its path of child
indices from the root; its record is computed from a 64-bit key obtained by
folding that path into the tree seed.  Backbone vertices draw (children,
surviving children) from the backbone joint law and list surviving children
first; every other vertex is a trap vertex drawing from the trap law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import rng
from ._kernels import draw_index, vertex_record
from .pgf import DerivedLaws, OffspringLaw, extinction_probability, pgf_eval

VertexId = tuple  # tuple[int, ...]; () is the root

ROOT_TOKEN = "·"
MAX_ORACLE_DEPTH = 6
MIN_ACCEPTANCE = 1e-6


class AddressError(LookupError):
    pass


class OracleInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class VertexRecord:
    total_children: int
    backbone_children: int
    is_backbone: bool
    level: int


@dataclass(frozen=True)
class TreeHandle:
    seed: int
    derived: DerivedLaws
    tables: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & rng.MASK64)
        jk, jj, jcdf = self.derived.joint_table()
        tsup, tcdf = self.derived.trap_table()
        object.__setattr__(self, "tables", (jk, jj, jcdf, tsup, tcdf))

    @property
    def seed64(self) -> np.uint64:
        return np.uint64(self.seed)


def _record(tree: TreeHandle, key, backbone: bool):
    tot, bb = vertex_record(key, backbone, *tree.tables)
    return int(tot), int(bb)


def expand(tree: TreeHandle, v: Iterable[int], cache: dict | None = None) -> VertexRecord:
    """Record of vertex ``v``.

    Pure in (tree.seed, tree.derived, v).  ``cache`` is an optional
    caller-owned memo keyed by path; it never changes the result.
    """
    v = tuple(v)
    if cache is not None and v in cache:
        return cache[v]
    key = rng.key_root(tree.seed)
    backbone = True
    tot, bb = _record(tree, key, True)
    for depth, i in enumerate(v):
        if not 0 <= i < tot:
            raise AddressError(f"child index {i} invalid at {v[:depth]!r} ({tot} children)")
        backbone = backbone and i < bb
        key = rng.key_child(key, i)
        tot, bb = _record(tree, key, backbone)
    rec = VertexRecord(tot, bb, backbone, len(v))
    if cache is not None:
        cache[v] = rec
    return rec


def _subtree_height(tree: TreeHandle, key, cap: int) -> int:
    """Height of the trap subtree below ``key``, truncated at ``cap``."""
    tot, _ = _record(tree, key, False)
    if tot == 0 or cap <= 0:
        return 0
    best = 0
    for i in range(tot):
        h = 1 + _subtree_height(tree, rng.key_child(key, i), cap - 1)
        if h > best:
            best = h
            if best >= cap:
                break
    return best


def branch_height(tree: TreeHandle, v: Iterable[int], cap: int) -> int:
    """Height of the branch at backbone vertex ``v`` (``v`` plus its trap
    children and their descendants), truncated at ``cap``.

    A return value equal to ``cap`` means "at least cap".
    """
    if cap <= 0:
        raise ValueError(f"cap must be positive, got {cap!r}")
    v = tuple(v)
    rec = expand(tree, v)
    if not rec.is_backbone:
        raise AddressError(f"{v!r} is not a backbone vertex")
    key = rng.fold_path(tree.seed, v)
    best = 0
    for i in range(rec.backbone_children, rec.total_children):
        h = 1 + _subtree_height(tree, rng.key_child(key, i), cap - 1)
        best = max(best, h)
        if best >= cap:
            return cap
    return best


# ---------------------------------------------------------------- finite trees

@dataclass
class FiniteTree:
    """Finite rooted tree as a map from path to child count.

    ``backbone`` holds the paths flagged as backbone (empty for trap trees).
    ``truncated_depth`` marks trees cut at a fixed depth: children of
    vertices at that depth are absent, and their recorded count is only
    meaningful for trees cut from the lazy tree (the rejection oracle
    records 0).
    """

    children: dict = field(default_factory=dict)
    backbone: set = field(default_factory=set)
    truncated_depth: int | None = None
    censored: bool = False

    def __len__(self):
        return len(self.children)

    @property
    def height(self) -> int:
        return max((len(p) for p in self.children), default=0)

    def generation_sizes(self) -> list[int]:
        sizes = [0] * (self.height + 1)
        for p in self.children:
            sizes[len(p)] += 1
        return sizes

    def shape(self, depth: int | None = None) -> str:
        """Canonical unordered shape down to ``depth`` (all levels if None)."""

        def rec(p):
            if depth is not None and len(p) >= depth:
                return "()"
            kids = sorted(rec(p + (i,)) for i in range(self.children[p]) if p + (i,) in self.children)
            return "(" + "".join(kids) + ")"

        return rec(())

    def dumps(self) -> str:
        lines = []
        for p in sorted(self.children, key=lambda p: (len(p), p)):
            name = ".".join(map(str, p)) if p else ROOT_TOKEN
            lines.append(f"{name}\t{self.children[p]}\t{int(p in self.backbone)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "FiniteTree":
        t = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            name, tot, flag = line.split("\t")
            p = () if name == ROOT_TOKEN else tuple(int(x) for x in name.split("."))
            t.children[p] = int(tot)
            if flag.strip() == "1":
                t.backbone.add(p)
        return t


def restrict(tree: TreeHandle, depth: int) -> FiniteTree:
    """The first ``depth`` generations of the lazy tree, as a finite tree."""
    out = FiniteTree(truncated_depth=depth)
    frontier = [((), rng.key_root(tree.seed), True)]
    for level in range(depth + 1):
        nxt = []
        for p, key, onbb in frontier:
            tot, bb = _record(tree, key, onbb)
            out.children[p] = tot
            if onbb:
                out.backbone.add(p)
            if level < depth:
                for i in range(tot):
                    nxt.append((p + (i,), rng.key_child(key, i), onbb and i < bb))
        frontier = nxt
    return out


def reach_probability(law: OffspringLaw, depth: int) -> float:
    """P(generation ``depth`` non-empty) for the unconditioned f-GW tree."""
    s = 0.0
    for _ in range(depth):
        s = pgf_eval(law, s)
    return 1.0 - s


def sample_conditioned_rejection(law: OffspringLaw, depth: int, gen: np.random.Generator,
                                 mode: str = "survival") -> FiniteTree:
    """Depth-truncated f-GW tree conditioned by rejection.

    ``mode="survival"`` accepts a grown tree with probability
    ``1 - q**Z_depth``, the chance its frontier survives forever, which makes
    the accepted law exactly the restriction of the tree conditioned on
    survival.  ``mode="reach"`` accepts whenever generation ``depth`` is
    non-empty; that law only approaches the conditioned one as depth grows.
    """
    if depth < 1 or depth > MAX_ORACLE_DEPTH:
        raise OracleInfeasible(f"oracle depth must be in 1..{MAX_ORACLE_DEPTH}, got {depth}")
    if law.mean <= 1.0:
        raise OracleInfeasible("rejection oracle needs a supercritical law")
    if mode not in ("survival", "reach"):
        raise ValueError(f"unknown mode {mode!r}")
    q = extinction_probability(law)
    accept = 1.0 - q if mode == "survival" else reach_probability(law, depth)
    if accept < MIN_ACCEPTANCE:
        raise OracleInfeasible(f"acceptance probability {accept:.3g} below {MIN_ACCEPTANCE}")
    support, probs = law.support, law.probs
    while True:
        t = FiniteTree(truncated_depth=depth)
        frontier = [()]
        for _ in range(depth):
            counts = gen.choice(support, size=len(frontier), p=probs)
            nxt = []
            for p, c in zip(frontier, counts):
                t.children[p] = int(c)
                nxt.extend(p + (i,) for i in range(int(c)))
            frontier = nxt
            if not frontier:
                break
        z = len(frontier)
        for p in frontier:
            t.children[p] = 0
        if mode == "reach":
            if z > 0:
                return t
        elif z > 0 and gen.random() < 1.0 - q**z:
            return t


def sample_trap_tree(derived: DerivedLaws, gen: np.random.Generator, size_cap: int) -> FiniteTree:
    """h-GW tree below an added parent.

    The added parent is the root path ``()`` with one child; the trap root is
    ``(0,)``.  Growth stops with ``censored=True`` once more than
    ``size_cap`` vertices exist.
    """
    if derived.trap is None:
        raise ValueError("law has p_0 = 0: trap trees are empty")
    if size_cap <= 0:
        raise ValueError(f"size_cap must be positive, got {size_cap!r}")
    support, probs = derived.trap.support, derived.trap.probs
    t = FiniteTree(children={(): 1})
    frontier = [(0,)]
    n = 2
    while frontier:
        counts = gen.choice(support, size=len(frontier), p=probs)
        nxt = []
        for p, c in zip(frontier, counts):
            t.children[p] = int(c)
            nxt.extend(p + (i,) for i in range(int(c)))
        n += len(nxt)
        if n > size_cap:
            for p in nxt:
                t.children[p] = 0
            t.censored = True
            break
        frontier = nxt
    return t


def trap_tree_from_seed(derived: DerivedLaws, seed: int, size_cap: int = 10**6) -> FiniteTree:
    """The lazily keyed h-tree used by the compiled trap experiment, made explicit."""
    tsup, tcdf = derived.trap_table()
    t = FiniteTree(children={(): 1})
    stack = [((0,), rng.key_trap_root(seed))]
    while stack:
        p, key = stack.pop()
        c = int(tsup[draw_index(tcdf, rng.record_uniform(np.uint64(key)))])
        t.children[p] = c
        if len(t.children) > size_cap:
            t.censored = True
            break
        stack.extend((p + (i,), rng.key_child(key, i)) for i in range(c))
    return t


def expected_total_progeny(derived: DerivedLaws) -> float:
    """Mean size of an h-tree (excluding the added parent)."""
    m = derived.fprime_q
    return math.inf if m >= 1 else 1.0 / (1.0 - m)
