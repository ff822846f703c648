"""Estimators and goodness-of-fit tests for walk output."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special
from scipy import stats as sps

ALPHA = 0.01


class InsufficientData(ValueError):
    pass


class DegenerateTest(ValueError):
    pass


class RangeError(ValueError):
    pass


@dataclass
class TestReport:
    statistic: float
    p_value: float
    n: int
    alpha: float = ALPHA
    dof: int | None = None
    verdict: str = ""

    def __post_init__(self):
        self.p_value = min(max(float(self.p_value), 0.0), 1.0)
        if not self.verdict:
            self.verdict = "pass" if self.p_value > self.alpha else "reject"

    @property
    def passed(self) -> bool:
        return self.p_value > self.alpha


@dataclass
class SpeedEstimate:
    nu_direct: float
    nu_regen: float
    se_direct: float
    se_regen: float
    n: int
    blocks: int


@dataclass
class SigmaEstimate:
    chi: np.ndarray = field(repr=False)
    sigma2: float
    se: float
    mean_chi: float
    se_mean_chi: float
    degenerate: bool = False
    unstable: bool = False

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


def _pool_increments(records) -> np.ndarray:
    if hasattr(records, "increments"):
        records = [records]
    parts = [r.increments for r in records if len(r.increments)]
    if not parts:
        return np.empty((0, 2), dtype=np.int64)
    return np.concatenate(parts)


def jackknife_ratio(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """Ratio of sums and its leave-one-out jackknife standard error."""
    n = len(num)
    sn, sd = num.sum(), den.sum()
    est = sn / sd
    loo = (sn - num) / (sd - den)
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return float(est), se


def estimate_speed(records, trajectories=(), min_blocks: int = 30) -> SpeedEstimate:
    """Speed from regeneration blocks (ratio of mean gains) and from |X_n|/n.

    With several trajectories the direct estimate is their average with a
    jackknife error across trajectories; with one, its error comes from the
    block variance (the CLT scale sigma / sqrt(n)).
    """
    inc = _pool_increments(records)
    if len(inc) < min_blocks:
        raise InsufficientData(f"{len(inc)} regeneration blocks, need {min_blocks}")
    dz = inc[:, 0].astype(float)
    dl = inc[:, 1].astype(float)
    nu_r, se_r = jackknife_ratio(dl, dz)

    trajectories = list(trajectories)
    if trajectories:
        n = trajectories[0].n_steps
        speeds = np.array([t.levels[-1] / t.n_steps for t in trajectories])
        nu_d = float(speeds.mean())
        if len(speeds) > 1:
            se_d = float(speeds.std(ddof=1) / math.sqrt(len(speeds)))
        else:
            chi = dl - nu_r * dz
            se_d = math.sqrt(chi.var(ddof=1) / dz.mean() / n)
    else:
        n, nu_d, se_d = 0, math.nan, math.nan
    return SpeedEstimate(nu_d, nu_r, se_d, se_r, n, len(inc))


def estimate_sigma(records, nu: float, min_blocks: int = 100, regime: str | None = None) -> SigmaEstimate:
    """Block-renewal variance: Var(chi) / E[delta zeta] with chi = dL - nu dZ."""
    inc = _pool_increments(records)
    if len(inc) < min_blocks:
        raise InsufficientData(f"{len(inc)} regeneration blocks, need {min_blocks}")
    dz = inc[:, 0].astype(float)
    dl = inc[:, 1].astype(float)
    chi = dl - nu * dz
    return sigma_from_chi(chi, dz.mean(), dz=dz, unstable=regime not in (None, "ballistic_clt"))


def sigma_from_chi(chi, mean_dzeta: float, dz=None, unstable: bool = False) -> SigmaEstimate:
    chi = np.asarray(chi, dtype=float)
    n = len(chi)
    v = chi.var(ddof=1)
    s2 = v / mean_dzeta
    se_mean = math.sqrt(v / n)
    if v == 0.0:
        return SigmaEstimate(chi, 0.0, 0.0, float(chi.mean()), 0.0, degenerate=True, unstable=unstable)
    if dz is not None and n > 2:
        # jackknife over blocks of sum((chi-mean)^2)/(n-2) / mean(dz)
        c2 = chi**2
        sc, sc2, sdz = chi.sum(), c2.sum(), dz.sum()
        m = n - 1
        loo_mean = (sc - chi) / m
        loo_var = (sc2 - c2 - m * loo_mean**2) / (m - 1)
        loo = loo_var / ((sdz - dz) / m)
        se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    else:
        se = s2 * math.sqrt(2.0 / (n - 1))
    return SigmaEstimate(chi, float(s2), float(se), float(chi.mean()), se_mean, unstable=unstable)


def build_B(levels, nu: float, sigma: float, n: int, grid: Sequence[float]) -> np.ndarray:
    """(|X_{floor(n t)}| - n nu t) / (sigma sqrt n) at each grid time."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    levels = np.asarray(levels)
    grid = np.asarray(grid, dtype=float)
    idx = np.floor(n * grid + 1e-9).astype(np.int64)
    if np.any(idx >= len(levels)) or np.any(idx < 0):
        raise ValueError("grid reaches beyond the trajectory horizon")
    return (levels[idx] - n * nu * grid) / (sigma * math.sqrt(n))


def interpolated_path(levels, nu: float, sigma: float, n: int, T: float = 1.0):
    """Knots (k/n, (|X_k| - k nu) / (sigma sqrt n)) for k <= n T of the linear interpolation."""
    kmax = int(math.floor(n * T))
    k = np.arange(kmax + 1)
    y = (np.asarray(levels[: kmax + 1], dtype=float) - k * nu) / (sigma * math.sqrt(n))
    return k / n, y


def modulus(times, values, delta: float) -> float:
    """sup over |s - t| <= delta of |w(s) - w(t)|, capped at 1, for the
    piecewise linear path through the given knots.

    The range over a sliding window of width delta is piecewise linear in the
    window position, so it peaks with one window end on a knot.
    """
    t = np.asarray(times, dtype=float)
    w = np.asarray(values, dtype=float)
    if len(t) < 2:
        return 0.0
    best = 0.0
    for i in range(len(t)):
        for lo, hi in ((t[i], min(t[i] + delta, t[-1])), (max(t[i] - delta, t[0]), t[i])):
            inside = w[(t >= lo) & (t <= hi)]
            ends = np.interp([lo, hi], t, w)
            r = max(inside.max(), ends.max()) - min(inside.min(), ends.min())
            if r > best:
                best = float(r)
        if best >= 1.0:
            return 1.0
    return best


def kolmogorov_sf(x: float) -> float:
    """P(K > x) for the Kolmogorov distribution."""
    if x <= 0:
        return 1.0
    return float(special.kolmogorov(x))


def ks_test(samples, cdf: Callable[[np.ndarray], np.ndarray], min_n: int = 20) -> TestReport:
    """Two-sided one-sample KS with the asymptotic Kolmogorov p-value."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n < min_n:
        raise InsufficientData(f"{n} samples, need {min_n}")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d = max(float(np.max(i / n - f)), float(np.max(f - (i - 1) / n)))
    return TestReport(d, kolmogorov_sf(math.sqrt(n) * d), n)


def normal_cdf(x):
    return special.ndtr(x)


def uniform_cdf(x):
    return np.clip(x, 0.0, 1.0)


def _pool_cells(obs: np.ndarray, exp: np.ndarray, min_expected: float):
    """Merge cells left to right until each has expected count >= min_expected;
    a short remainder is merged into the last kept cell."""
    o_out, e_out = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(obs, exp):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            o_out.append(o_acc)
            e_out.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if e_out:
            o_out[-1] += o_acc
            e_out[-1] += e_acc
        else:
            o_out.append(o_acc)
            e_out.append(e_acc)
    return np.array(o_out), np.array(e_out)


def chi_square_test(observed, expected_pmf, min_expected: float = 5.0, fitted: int = 0) -> TestReport:
    """Pearson goodness of fit; cells are pooled so each expects >= min_expected.

    ``expected_pmf`` may carry less than unit mass (a truncated support); the
    missing mass is treated as an extra tail cell with zero observations
    unless ``observed`` has one more entry than the pmf.
    """
    obs = np.asarray(observed, dtype=float)
    pmf = np.asarray(expected_pmf, dtype=float)
    n = obs.sum()
    if len(obs) == len(pmf) + 1:
        pmf = np.append(pmf, max(0.0, 1.0 - pmf.sum()))
    elif pmf.sum() < 1.0 - 1e-9:
        obs = np.append(obs, 0.0)
        pmf = np.append(pmf, 1.0 - pmf.sum())
    exp = n * pmf
    o, e = _pool_cells(obs, exp, min_expected)
    if len(o) < 2:
        raise DegenerateTest("all expected mass falls in a single cell")
    stat = float(np.sum((o - e) ** 2 / e))
    dof = len(o) - 1 - fitted
    return TestReport(stat, float(sps.chi2.sf(stat, dof)), int(n), dof=dof)


def chi_square_homogeneity(counts_a: dict, counts_b: dict, min_expected: float = 5.0) -> TestReport:
    """Two-sample chi-square on categorical counts (e.g. tree shapes).

    Categories are ordered by pooled frequency and rare ones pooled into a
    single cell so every expected count is at least ``min_expected``.
    """
    keys = sorted(set(counts_a) | set(counts_b), key=lambda k: -(counts_a.get(k, 0) + counts_b.get(k, 0)))
    a = np.array([counts_a.get(k, 0) for k in keys], dtype=float)
    b = np.array([counts_b.get(k, 0) for k in keys], dtype=float)
    na, nb = a.sum(), b.sum()
    tot = a + b
    frac_small = min(na, nb) / (na + nb)
    keep = tot * frac_small >= min_expected
    if not keep.all():
        a = np.append(a[keep], a[~keep].sum())
        b = np.append(b[keep], b[~keep].sum())
        tot = a + b
        if tot[-1] * frac_small < min_expected and len(a) > 1:
            a[-2] += a[-1]
            b[-2] += b[-1]
            a, b = a[:-1], b[:-1]
            tot = a + b
    if len(a) < 2:
        raise DegenerateTest("all mass in one category")
    ea = tot * na / (na + nb)
    eb = tot * nb / (na + nb)
    stat = float(np.sum((a - ea) ** 2 / ea) + np.sum((b - eb) ** 2 / eb))
    dof = len(a) - 1
    return TestReport(stat, float(sps.chi2.sf(stat, dof)), int(na + nb), dof=dof)


def binomial_within(count: int, n: int, p: float, k_sd: float = 4.0) -> bool:
    return abs(count - n * p) <= k_sd * math.sqrt(n * p * (1 - p))


@dataclass
class TrendReport:
    verdict: str
    sizes: np.ndarray
    moments: np.ndarray
    growth_per_decade: float
    last_spread: float
    censored_fraction: float
    tainted: bool


def moment_trend(samples, order: int = 2, censored=None, min_n: int = 10**4,
                 start: int = 10**4, per_decade: int = 2,
                 stable_tol: float = 0.05, diverge_rate: float = 0.25) -> TrendReport:
    """Running empirical moment at log-spaced sample sizes, with a verdict.

    Sizes are ``start * 10**(i / per_decade)`` up to the sample count.
    "stabilizing": the last three evaluations differ by less than
    ``stable_tol`` (max/min - 1).  "diverging": the evaluations increase at
    every step and the mean growth exceeds ``diverge_rate`` per decade.
    Otherwise "inconclusive".
    """
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < min_n:
        raise InsufficientData(f"{n} samples, need {min_n}")
    sizes = []
    i = 0
    while True:
        s = int(round(start * 10 ** (i / per_decade)))
        if s > n:
            break
        sizes.append(s)
        i += 1
    sizes = np.array(sizes)
    csum = np.cumsum(x**order)
    moments = csum[sizes - 1] / sizes
    cf = float(np.mean(censored)) if censored is not None and len(censored) else 0.0

    last = moments[-3:]
    spread = float(last.max() / last.min() - 1.0) if len(last) == 3 else math.inf
    decades = math.log10(sizes[-1] / sizes[0]) if len(sizes) > 1 else 0.0
    growth = (moments[-1] / moments[0]) ** (1.0 / decades) - 1.0 if decades > 0 else 0.0
    monotone = bool(np.all(np.diff(moments) > 0))
    if len(last) == 3 and spread < stable_tol:
        verdict = "stabilizing"
    elif monotone and growth > diverge_rate:
        verdict = "diverging"
    else:
        verdict = "inconclusive"
    return TrendReport(verdict, sizes, moments, float(growth), spread, cf, cf > 0.01)


def tail_slope(samples, lo: int, hi: int, min_n: int = 10**4) -> tuple[float, float]:
    """Least-squares slope (and its standard error) of log P(H >= m) on m in [lo, hi]."""
    h = np.asarray(samples)
    if len(h) < min_n:
        raise InsufficientData(f"{len(h)} samples, need {min_n}")
    if hi <= lo:
        raise RangeError("need hi > lo")
    ms = np.arange(lo, hi + 1)
    surv = np.array([np.count_nonzero(h >= m) for m in ms], dtype=float)
    if np.any(surv == 0) or np.all(surv == surv[0]):
        raise RangeError(f"empirical survival is empty or flat on [{lo}, {hi}]")
    y = np.log(surv / len(h))
    fit = sps.linregress(ms, y)
    return float(fit.slope), float(fit.stderr)


@dataclass
class VarianceProfile:
    n: np.ndarray
    variance: np.ndarray
    se: np.ndarray
    clipped: np.ndarray
    inner_means: np.ndarray = field(repr=False)


def nested_variance(values: np.ndarray) -> tuple[float, float, bool]:
    """Across-group variance of group means, corrected for inner sampling noise.

    ``values`` has shape (groups, per_group).  Returns (estimate, standard
    error, clipped flag).  With a single observation per group the inner
    variance is unknown and no correction is possible.
    """
    values = np.asarray(values, dtype=float)
    g, w = values.shape
    means = values.mean(axis=1)
    outer = means.var(ddof=1)
    if w > 1:
        inner = values.var(axis=1, ddof=1).mean()
        est = outer - inner / w
    else:
        est = outer
    # delta-method se of the across-group variance of the means
    dev2 = (means - means.mean()) ** 2
    se = float(dev2.std(ddof=1) / math.sqrt(g)) if g > 1 else math.nan
    clipped = est < 0
    return (0.0 if clipped else float(est)), se, bool(clipped)


def quenched_variance_profile(fvalues: np.ndarray, ns: Sequence[int]) -> VarianceProfile:
    """Profile over n of Var_trees(E_walks[F]) from an array shaped
    (len(ns), trees, walks)."""
    fvalues = np.asarray(fvalues, dtype=float)
    var, se, clip = [], [], []
    for k in range(len(ns)):
        v, s, c = nested_variance(fvalues[k])
        var.append(v)
        se.append(s)
        clip.append(c)
    if any(clip):
        warnings.warn("negative nested variance estimate clipped to 0", RuntimeWarning, stacklevel=2)
    return VarianceProfile(np.asarray(ns), np.array(var), np.array(se), np.array(clip), fvalues.mean(axis=2))


def non_increasing_within_bars(values, errors) -> bool:
    """True if each value is at most the previous one, allowing the two
    one-standard-error bars to overlap."""
    v = np.asarray(values, dtype=float)
    e = np.asarray(errors, dtype=float)
    return bool(np.all(v[1:] - e[1:] <= v[:-1] + e[:-1]))


def lag1_autocorr(x) -> float:
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    return float(np.dot(x[:-1], x[1:]) / np.dot(x, x))
