"""Desk-scale acceptance checks on the binary reference law {0: 1/4, 2: 3/4}.

Each test records one PASS/FAIL line (printed inline and again in the
terminal summary) before asserting.  All randomness descends from the
default master seed.
"""
import itertools
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gwwalk import experiments, pgf, stats, tree, walk
from gwwalk.experiments import ExperimentConfig
from gwwalk.pgf import OffspringLaw
from gwwalk.tree import TreeHandle

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def record(k, title, ok, elapsed, limit, detail):
        ok_time = elapsed < limit
        line = (f"criterion {k:2d} [{'PASS' if ok and ok_time else 'FAIL'}] {title}: {detail}; "
                f"{elapsed:.1f}s (limit {limit:g}s)")
        ACCEPTANCE_LINES[k] = line
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
        assert ok_time, line

    return record


def cfg(name, **kw):
    return ExperimentConfig(name, **kw)


def test_c01_extinction(verdict):
    t0 = time.perf_counter()
    q_bin = pgf.extinction_probability(pgf.BINARY)
    q_nodeath = pgf.extinction_probability(OffspringLaw({2: 1.0}))
    q_sub = pgf.extinction_probability(OffspringLaw({0: 0.5, 1: 0.5}))
    el = time.perf_counter() - t0
    ok = abs(q_bin - 1 / 3) <= 1e-12 and q_nodeath == 0.0 and q_sub == 1.0
    verdict(1, "extinction probability", ok, el, 1,
            f"|q - 1/3| = {abs(q_bin - 1 / 3):.1e}, q{{2:1}} = {q_nodeath}, q(subcritical) = {q_sub}")


def test_c02_decomposition_oracle(verdict):
    t0 = time.perf_counter()
    res = experiments.run_oracle_compare(cfg("oracle-compare", replicates=10**5, depth=2))
    el = time.perf_counter() - t0
    p = res.summary["p_value"]
    freqs = {r["shape"]: (r["decomposition"], r["rejection"]) for r in res.rows}
    verdict(2, "decomposition vs rejection oracle", p > 0.01, el, 60,
            f"chi-square p = {p:.3g}, shape counts {freqs}")


def _kernel_row(at_root, c, beta):
    if at_root:
        return np.concatenate(([0.0], np.full(c, 1.0 / c)))
    return np.concatenate(([1.0], np.full(c, beta))) / (1.0 + beta * c)


def test_c03_kernel_exactness(verdict):
    t0 = time.perf_counter()
    c = cfg("regimes")
    checked, bad, root_rows = 0, [], 0
    laws = {"binary": pgf.derive_laws(pgf.BINARY),
            "mixed": pgf.derive_laws(OffspringLaw({0: 0.2, 1: 0.3, 3: 0.5}))}
    for name, d in laws.items():
        for beta in (0.5, 1.0, 2.0):
            trs = [walk.run_walk(TreeHandle(c.stream(f"kernel-tree-{name}", i), d), beta, 10**4,
                                 c.stream(f"kernel-walk-{name}-{beta}", i)) for i in range(10)]
            counts = experiments.transition_counts(trs)
            assert sum(v.sum() for v in counts.values()) == 10**5
            for (at_root, deg), obs in counts.items():
                n = int(obs.sum())
                if deg == 0 or n < 100:
                    continue
                root_rows += at_root
                for slot, p in enumerate(_kernel_row(at_root, deg, beta)):
                    checked += 1
                    if p == 0.0:
                        ok = obs[slot] == 0
                    else:
                        ok = stats.binomial_within(int(obs[slot]), n, p, 4)
                    if not ok:
                        bad.append((name, beta, at_root, deg, slot, int(obs[slot]), n))
    el = time.perf_counter() - t0
    verdict(3, "kernel exactness", not bad and root_rows > 0, el, 60,
            f"{checked} transition cells over 6 runs of 1e5 visits, {root_rows} root rows, outside 4 sd: {bad}")


def _brute(levels):
    return [k for k in range(1, len(levels))
            if all(levels[j] < levels[k] for j in range(k))
            and all(levels[j] >= levels[k] for j in range(k + 1, len(levels)))]


def test_c04_regeneration_detector(verdict):
    t0 = time.perf_counter()
    n_seq, mismatches = 0, 0
    for length in range(1, 13):
        for steps in itertools.product((-1, 1), repeat=length - 1):
            levels = np.concatenate(([0], np.cumsum(steps))).astype(np.int64)
            rec = walk.detect_regenerations(levels)
            brute = _brute(levels.tolist())
            found = list(rec.zetaY) + ([rec.unconfirmed_tail] if rec.unconfirmed_tail is not None else [])
            if found != brute or list(rec.zetaY) != brute[:-1]:
                mismatches += 1
            n_seq += 1
    el = time.perf_counter() - t0
    verdict(4, "regeneration detector", mismatches == 0, el, 60,
            f"{n_seq} level sequences of length <= 12, {mismatches} mismatches")


def test_c05_regeneration_iid(verdict):
    t0 = time.perf_counter()
    c = cfg("speed")
    d = pgf.derive_laws(pgf.BINARY)
    recs, _ = experiments.regeneration_runs(d, 1.0, 20, 25000, c, "iid")
    split, _ = experiments.regeneration_runs(d, 1.0, 20, 25000, c, "iid-speed")
    diag = experiments.regeneration_diagnostics(recs, split)
    el = time.perf_counter() - t0
    ok = (diag["blocks"] >= 10**4 and abs(diag["lag1_dzeta"]) <= 0.05 and abs(diag["lag1_dlevel"]) <= 0.05
          and diag["chi_centred"])
    verdict(5, "regeneration i.i.d. structure", ok, el, 300,
            f"{diag['blocks']} blocks, lag-1 dzeta {diag['lag1_dzeta']:+.4f}, dlevel {diag['lag1_dlevel']:+.4f}, "
            f"mean chi {diag['chi_mean']:+.4f} (se {diag['chi_se']:.4f})")


def test_c06_annealed_clt(verdict):
    t0 = time.perf_counter()
    res = experiments.run_annealed_clt(cfg("annealed-clt", betas=[1.0], n=10**4, replicates=2000))
    el = time.perf_counter() - t0
    r = res.rows[0]
    verdict(6, "annealed CLT, beta = 1", r["p_value"] > 0.01, el, 300,
            f"KS p = {r['p_value']:.3g}, D = {r['ks_D']:.4f}, sigma^2 = {r['sigma2']:.4f}, nu_n = {r['nu_n']:.5f}")


def test_c07_quenched_clt(verdict):
    t0 = time.perf_counter()
    res = experiments.run_quenched_clt(cfg("quenched-clt", betas=[1.0], n=10**4, trees=5, walks=2000,
                                           replicates=2000))
    el = time.perf_counter() - t0
    ps = [r["p_value"] for r in res.rows]
    verdict(7, "quenched CLT, 5 trees, beta = 1", min(ps) > 0.002, el, 600,
            "per-tree KS p = " + ", ".join(f"{p:.3g}" for p in ps))


def test_c08_trap_moments(verdict):
    t0 = time.perf_counter()
    res = experiments.run_trap_moments(cfg("trap-moments", betas=[1.0, 1.5], trap_samples=10**6))
    el = time.perf_counter() - t0
    parts = [f"beta={r['beta']}: {r['trend']} (want {r['expected']}; moments {r['moments']}; "
             f"censored {r['censored_fraction']:.2%})" for r in res.rows]
    verdict(8, "trap-moment threshold", res.passed, el, 600, "; ".join(parts))


def test_c09_branch_tail(verdict):
    t0 = time.perf_counter()
    d = pgf.derive_laws(pgf.BINARY)
    h = experiments.branch_heights(d, 10**5, 64, cfg("regimes"))
    slope, se = stats.tail_slope(h, 2, 10)
    el = time.perf_counter() - t0
    target = math.log(d.fprime_q)
    rel = abs(slope / target - 1)
    verdict(9, "branch-height tail", rel <= 0.15, el, 60,
            f"slope {slope:.4f} +- {se:.4f} vs log f'(q) = {target:.4f} ({rel:.1%} off)")


def test_c10_geometric_excursions(verdict):
    t0 = time.perf_counter()
    d = pgf.derive_laws(pgf.BINARY)
    w = experiments.root_excursions(d, 1.0, 10**5, (2, 1), cfg("regimes"))
    obs = np.bincount(w)
    p_ex = 0.5
    pmf = (1 - p_ex) * p_ex ** np.arange(len(obs))
    rep = stats.chi_square_test(obs, pmf)
    el = time.perf_counter() - t0
    verdict(10, "geometric excursion counts", rep.p_value > 0.01, el, 120,
            f"root (Z1, Z1g) = (2, 1), N = {len(w)}, mean W {w.mean():.4f} (want 1), chi-square p = {rep.p_value:.3g}")


def test_c11_quenched_variance(verdict):
    t0 = time.perf_counter()
    res = experiments.run_quenched_variance(cfg("quenched-variance", betas=[1.0], trees=20, walks=200,
                                                ns=[2**k for k in range(8, 15)]))
    el = time.perf_counter() - t0
    prof = ", ".join(f"{r['n']}:{r['variance']:.4f}+-{r['se']:.4f}" for r in res.rows)
    verdict(11, "quenched variance decay", res.passed, el, 900, prof)


def test_c12_negative_control(verdict):
    t0 = time.perf_counter()
    res = experiments.run_annealed_clt(cfg("annealed-clt", betas=[1.8], n=10**4, replicates=2000))
    el = time.perf_counter() - t0
    r = res.rows[0]
    verdict(12, "negative control, beta = 1.8", r["p_value"] < 0.01, el, 300,
            f"regime {r['regime']}, KS p = {r['p_value']:.3g}, D = {r['ks_D']:.4f}")
