"""The beta-biased walk, its backbone projection, regenerations and traps.

A trajectory is stored as arrays indexed by time: ``levels`` (|X_t|),
``on_backbone`` and ``degree`` (children of X_t), plus the moves taken
(-1 for a step to the parent, otherwise the child index), from which vertex
addresses are rebuilt on demand.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from ._kernels import choose_move, regeneration_scan, seed_sequence, trap_return_times, walk_on_tree
from .pgf import DerivedLaws
from .tree import FiniteTree, TreeHandle, expand


class MalformedTrajectory(ValueError):
    pass


class IncompleteExcursion(ValueError):
    pass


@dataclass
class Trajectory:
    levels: np.ndarray
    on_backbone: np.ndarray
    degree: np.ndarray
    moves: np.ndarray | None
    beta: float
    tree_seed: int | None = None
    walk_seed: int | None = None

    def __len__(self):
        return len(self.levels)

    @property
    def n_steps(self) -> int:
        return len(self.levels) - 1

    def vertices(self) -> list[tuple]:
        """Vertex address of X_t for every t (needs stored moves)."""
        if self.moves is None:
            raise ValueError("trajectory was stored without moves")
        out = [()]
        v = ()
        for m in self.moves:
            v = v[:-1] if m < 0 else v + (int(m),)
            out.append(v)
        return out

    def dumps(self) -> str:
        return "".join(f"{t}\t{lv}\t{int(f)}\n" for t, (lv, f) in enumerate(zip(self.levels, self.on_backbone)))


@dataclass
class BackboneTrace:
    r: np.ndarray
    levels: np.ndarray

    def __len__(self):
        return len(self.r)


@dataclass
class RegenerationRecord:
    zetaY: np.ndarray
    unconfirmed_tail: int | None
    zetaX: np.ndarray | None = None
    # columns: (delta zeta^X, delta |X|) between consecutive confirmed regenerations
    increments: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))

    @property
    def dzeta(self) -> np.ndarray:
        return self.increments[:, 0]

    @property
    def dlevel(self) -> np.ndarray:
        return self.increments[:, 1]


def step(tree: TreeHandle, v, beta: float, u: float) -> tuple:
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta!r}")
    v = tuple(v)
    c = expand(tree, v).total_children
    m = choose_move(float(u), c, float(beta), len(v) == 0)
    return v[:-1] if m < 0 else v + (int(m),)


def run_walk(tree: TreeHandle, beta: float, n_steps: int, walk_seed: int,
             keep_vertices: bool = True) -> Trajectory:
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta!r}")
    levels = np.empty(n_steps + 1, dtype=np.int64)
    flags = np.empty(n_steps + 1, dtype=np.uint8)
    moves = np.empty(n_steps, dtype=np.int64)
    degree = np.empty(n_steps + 1, dtype=np.int64)
    walk_on_tree(tree.seed64, rng.u64(walk_seed), float(beta), n_steps, *tree.tables,
                 levels, flags, moves, degree)
    return Trajectory(levels, flags.astype(bool), degree, moves if keep_vertices else None,
                      float(beta), tree.seed, int(walk_seed))


def project_backbone(traj: Trajectory) -> BackboneTrace:
    """Times r(n) of backbone-to-backbone steps and the walk Y_n = X_{r(n)}.

    A final visit to a trap is simply never closed by a backbone step, so it
    contributes nothing to Y.
    """
    f = traj.on_backbone
    if len(f) == 0 or not f[0]:
        raise MalformedTrajectory("trajectory must start on the backbone")
    both = np.flatnonzero(f[1:] & f[:-1]) + 1
    r = np.concatenate(([0], both)).astype(np.int64)
    return BackboneTrace(r, traj.levels[r])


def _check_nearest_neighbour(levels: np.ndarray) -> None:
    if len(levels) == 0 or levels[0] != 0:
        raise MalformedTrajectory("levels must start at 0")
    if len(levels) > 1 and np.any(np.abs(np.diff(levels)) != 1):
        raise MalformedTrajectory("levels must change by exactly 1 per step")


def detect_regenerations(levels) -> RegenerationRecord:
    """Regeneration indices of a backbone level path within its horizon.

    Every index satisfying the regeneration condition inside the horizon is
    found; the latest one is still exposed to the unseen future and is
    reported as ``unconfirmed_tail`` instead of being confirmed.
    """
    levels = np.asarray(levels, dtype=np.int64)
    _check_nearest_neighbour(levels)
    found = regeneration_scan(levels)
    if len(found) == 0:
        return RegenerationRecord(found, None)
    return RegenerationRecord(found[:-1].copy(), int(found[-1]))


def map_to_X(record: RegenerationRecord, trace: BackboneTrace) -> RegenerationRecord:
    """Regeneration times of X and the i.i.d. increments between them.

    The first visit of X to a regeneration vertex is always the backbone step
    Y makes onto it, so zeta^X_k = r(zeta^Y_k).  Increments start at the
    first confirmed regeneration; the initial stretch from time 0 has a
    different law and is dropped.
    """
    zx = trace.r[record.zetaY]
    lv = trace.levels[record.zetaY]
    inc = np.column_stack((np.diff(zx), np.diff(lv))).astype(np.int64)
    return RegenerationRecord(record.zetaY, record.unconfirmed_tail, zx, inc)


def regenerations(traj: Trajectory) -> RegenerationRecord:
    trace = project_backbone(traj)
    return map_to_X(detect_regenerations(trace.levels), trace)


def excursion_decomposition(traj: Trajectory, trace: BackboneTrace, k: int):
    """(N_k, durations of the trap excursions from Y_k before the next backbone step)."""
    if not 0 <= k < len(trace) - 1:
        raise IncompleteExcursion(f"no completed backbone step after index {k}")
    a, b = int(trace.r[k]), int(trace.r[k + 1])
    # inside [a, b) X is on the backbone only when sitting at Y_k
    home = a + np.flatnonzero(traj.on_backbone[a:b])
    gammas = np.diff(home)
    return len(gammas), [int(g) for g in gammas]


def count_root_excursions(tree: TreeHandle, traj: Trajectory):
    """Trap excursions from the root between consecutive backbone departures.

    Returns (W values for every completed stay at the root, (Z_1, Z_1^g)).
    """
    rec = expand(tree, ())
    at_root = np.flatnonzero(traj.levels[:-1] == 0)
    departs_bb = traj.on_backbone[at_root + 1]
    ws = []
    w = 0
    for bb in departs_bb:
        if bb:
            ws.append(w)
            w = 0
        else:
            w += 1
    return np.array(ws, dtype=np.int64), (rec.total_children, rec.backbone_children)


def trap_return_time(trap: FiniteTree, beta: float, gen: np.random.Generator, time_cap: int):
    """First return to the added parent ``()`` of ``trap``, started there.

    Returns (tau, censored); when censored, tau is the cap.
    """
    if time_cap <= 0:
        raise ValueError("time_cap must be positive")
    v = (0,)
    t = 1
    while v:
        if t >= time_cap:
            return t, True
        c = trap.children[v]
        m = choose_move(gen.random(), c, float(beta), False)
        v = v[:-1] if m < 0 else v + (int(m),)
        t += 1
    return t, False


def trap_return_sample(derived: DerivedLaws, beta: float, n: int, tree_seed: int, walk_seed: int,
                       time_cap: int = 10**8):
    """``n`` independent trap return times, each on a fresh lazily grown h-tree.

    Trap trees come from the stream ``tree_seed`` and walks from
    ``walk_seed``; sample i uses the i-th seed of each.
    """
    tsup, tcdf = derived.trap_table()
    seeds = seed_sequence(rng.u64(tree_seed), n)
    wseeds = seed_sequence(rng.u64(walk_seed), n)
    tau = np.empty(n, dtype=np.int64)
    cens = np.empty(n, dtype=np.bool_)
    trap_return_times(seeds, wseeds, float(beta), int(time_cap), tsup, tcdf, tau, cens)
    return tau, cens
