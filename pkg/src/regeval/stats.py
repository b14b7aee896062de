"""Statistical primitives for metric aggregation and leaderboard tests.

The two significance tests are one-sided and rank-based.  Both switch between
an exact null distribution (computed by integer-count dynamic programming,
equivalent to full enumeration) and a tie-corrected normal approximation with
a 0.5 continuity correction.  Exactness matters here: leaderboard positions
hinge on p < alpha decisions, so the exact branch is used whenever feasible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadQuantile, DegenerateInput, EmptyInput, LengthMismatch


@dataclass(frozen=True)
class TestResult:
    """One-sided test outcome.

    ``method`` is "exact" (enumerated null distribution), "normal"
    (tie-corrected approximation with continuity correction), or
    "degenerate" (no informative pairs; p forced to 1).
    """

    statistic: float
    p_one_sided: float
    n_effective: int
    method: str


@dataclass(frozen=True)
class PearsonFit:
    r: float
    slope: float
    intercept: float


@dataclass(frozen=True)
class CohortStats:
    """Per-metric cohort summary: mean, sample (n-1) standard deviation, and
    the number of cases each metric covered."""

    means: dict
    stds: dict
    counts: dict


def percentile(values, q: float) -> float:
    """Linear interpolation between closest ranks on the sorted values.

    h = (n - 1) * q / 100; result = v[floor(h)] + frac * (v[floor(h) + 1] - v[floor(h)]).
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise EmptyInput("percentile of an empty sequence")
    if not (0.0 <= q <= 100.0) or not math.isfinite(q):
        raise BadQuantile(f"quantile must be in [0, 100], got {q}")
    v = np.sort(vals)
    h = (v.size - 1) * (q / 100.0)
    lo = int(math.floor(h))
    if lo == v.size - 1:
        return float(v[lo])
    frac = h - lo
    return float(v[lo] + frac * (v[lo + 1] - v[lo]))


def dsc30(per_structure_dsc) -> float:
    """Robustness statistic: 30th percentile of a case's per-structure overlap."""
    return percentile(per_structure_dsc, 30.0)


def tre30(per_landmark_tre) -> float:
    """Robustness statistic on the large-error side: 70th percentile of a
    case's per-landmark distances (the boundary of the worst 30 percent)."""
    return percentile(per_landmark_tre, 70.0)


def mean_std(values) -> tuple[float, float]:
    """Mean and n-1 standard deviation; std is 0.0 for a single value."""
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise EmptyInput("mean_std of an empty sequence")
    mean = float(np.mean(vals))
    std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
    return mean, std


def summarize_cohort(per_case_values: dict) -> CohortStats:
    """Column-wise mean/std over cases for a {metric: per-case values} map.

    Metrics may cover different case subsets (landmark-based ones often do).
    """
    means = {}
    stds = {}
    counts = {}
    for metric, vals in per_case_values.items():
        means[metric], stds[metric] = mean_std(vals)
        counts[metric] = len(vals)
    return CohortStats(means=means, stds=stds, counts=counts)


# ---------------------------------------------------------------------------
# rank helpers


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _tie_counts(values: np.ndarray) -> np.ndarray:
    _, counts = np.unique(values, return_counts=True)
    return counts


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test


def _wilcoxon_exact_p_ge(doubled_ranks: list[int], w2_obs: int) -> float:
    """P(W+ >= w_obs) under random signs, on ranks doubled to integers.

    Dynamic program over the distribution of the doubled positive-rank sum;
    integer counts make this identical to enumerating all 2**n sign patterns.
    """
    total = sum(doubled_ranks)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled_ranks:
        for s in range(total, r - 1, -1):
            if counts[s - r]:
                counts[s] += counts[s - r]
    n_ge = sum(counts[max(w2_obs, 0) :])
    return n_ge / (1 << len(doubled_ranks))


def wilcoxon_signed_rank(x, y, alternative: str = "greater", method: str = "auto") -> TestResult:
    """Paired one-sided Wilcoxon signed-rank test.

    Zero differences are dropped (classic Wilcoxon); |d| is ranked with
    average ranks for ties and W+ is the rank sum over positive differences.
    The null distribution is exact for n_effective <= 25 (conditional on the
    observed ranks), otherwise a tie-corrected normal approximation with a
    0.5 continuity correction.  With no nonzero differences the result is
    flagged "degenerate" with p = 1 so that no comparison can be won.

    ``alternative`` "greater" tests whether x tends to exceed y.
    """
    if alternative not in ("greater", "less"):
        raise ValueError(f"alternative must be 'greater' or 'less', got {alternative!r}")
    if method not in ("auto", "exact", "normal"):
        raise ValueError(f"method must be 'auto', 'exact' or 'normal', got {method!r}")
    xv = np.asarray(x, dtype=np.float64).ravel()
    yv = np.asarray(y, dtype=np.float64).ravel()
    if xv.size != yv.size:
        raise LengthMismatch(f"paired samples differ in length: {xv.size} vs {yv.size}")
    if xv.size == 0:
        raise EmptyInput("wilcoxon_signed_rank needs at least one pair")

    if alternative == "less":
        # p(less on (x, y)) equals p(greater on (y, x)); route through one
        # code path so the identity holds bit for bit.
        swapped = wilcoxon_signed_rank(y, x, "greater", method)
        d = xv - yv
        nz = d[d != 0.0]
        stat = 0.0
        if nz.size:
            stat = float(np.sum(_average_ranks(np.abs(nz))[nz > 0]))
        return TestResult(stat, swapped.p_one_sided, swapped.n_effective, swapped.method)

    d = xv - yv
    nz = d[d != 0.0]
    n = int(nz.size)
    if n == 0:
        return TestResult(statistic=0.0, p_one_sided=1.0, n_effective=0, method="degenerate")

    abs_d = np.abs(nz)
    ranks = _average_ranks(abs_d)
    w_plus = float(np.sum(ranks[nz > 0]))

    use_exact = method == "exact" or (method == "auto" and n <= 25)
    if use_exact:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        w2 = int(np.rint(2.0 * np.sum(ranks[nz > 0])))
        p = _wilcoxon_exact_p_ge([int(r) for r in doubled], w2)
        return TestResult(w_plus, min(p, 1.0), n, "exact")

    mean = n * (n + 1) / 4.0
    ties = _tie_counts(abs_d)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(ties**3 - ties)) / 48.0
    if var <= 0.0:
        return TestResult(w_plus, 1.0, n, "degenerate")
    z = (w_plus - 0.5 - mean) / math.sqrt(var)
    return TestResult(w_plus, min(_norm_sf(z), 1.0), n, "normal")


# ---------------------------------------------------------------------------
# Mann-Whitney U test


def _mwu_exact_counts(n: int, m: int) -> list[int]:
    """Distribution of U for sample sizes (n, m) without ties.

    f[k][u] after considering the j-th smallest pooled rank counts the ways
    to assign k of them to x with U = u; built with the classic recurrence
    f(j, k, u) = f(j-1, k, u) + f(j-1, k-1, u - (j - k)).
    """
    max_u = n * m
    # f[k][u], iterating pooled ranks j = 1..n+m
    f = [[0] * (max_u + 1) for _ in range(n + 1)]
    f[0][0] = 1
    for j in range(1, n + m + 1):
        for k in range(min(j, n), 0, -1):
            row = f[k]
            prev = f[k - 1]
            shift = j - k  # number of y-values below this x-value
            if shift > max_u:
                continue
            for u in range(max_u - shift, -1, -1):
                if prev[u]:
                    row[u + shift] += prev[u]
    return f[n]


def mann_whitney_u(x, y, alternative: str = "greater", method: str = "auto") -> TestResult:
    """Unpaired one-sided Mann-Whitney U test (Wilcoxon rank-sum).

    U is computed from average ranks of the pooled sample.  The null is
    exact when min(n, m) <= 10 and the pooled sample is tie-free, otherwise
    a tie-corrected normal approximation with continuity correction.
    """
    if alternative not in ("greater", "less"):
        raise ValueError(f"alternative must be 'greater' or 'less', got {alternative!r}")
    if method not in ("auto", "exact", "normal"):
        raise ValueError(f"method must be 'auto', 'exact' or 'normal', got {method!r}")
    xv = np.asarray(x, dtype=np.float64).ravel()
    yv = np.asarray(y, dtype=np.float64).ravel()
    if xv.size == 0 or yv.size == 0:
        raise EmptyInput("mann_whitney_u needs nonempty samples")

    if alternative == "less":
        swapped = mann_whitney_u(y, x, "greater", method)
        pooled = np.concatenate([xv, yv])
        ranks = _average_ranks(pooled)
        u_x = float(np.sum(ranks[: xv.size]) - xv.size * (xv.size + 1) / 2.0)
        return TestResult(u_x, swapped.p_one_sided, swapped.n_effective, swapped.method)

    n, m = int(xv.size), int(yv.size)
    pooled = np.concatenate([xv, yv])
    ranks = _average_ranks(pooled)
    u_x = float(np.sum(ranks[:n]) - n * (n + 1) / 2.0)

    has_ties = np.unique(pooled).size != pooled.size
    use_exact = method == "exact" or (method == "auto" and min(n, m) <= 10 and not has_ties)
    if use_exact and has_ties:
        raise ValueError("exact Mann-Whitney null is only defined for tie-free data")
    if use_exact:
        counts = _mwu_exact_counts(n, m)
        u_int = int(round(u_x))
        n_ge = sum(counts[u_int:])
        p = n_ge / math.comb(n + m, n)
        return TestResult(u_x, min(p, 1.0), n + m, "exact")

    big_n = n + m
    mean = n * m / 2.0
    ties = _tie_counts(pooled)
    tie_term = float(np.sum(ties**3 - ties)) / (big_n * (big_n - 1.0)) if big_n > 1 else 0.0
    var = n * m / 12.0 * (big_n + 1.0 - tie_term)
    if var <= 0.0:
        return TestResult(u_x, 1.0, big_n, "degenerate")
    z = (u_x - 0.5 - mean) / math.sqrt(var)
    return TestResult(u_x, min(_norm_sf(z), 1.0), big_n, "normal")


# ---------------------------------------------------------------------------
# Pearson correlation with linear fit


def pearson_fit(x, y) -> PearsonFit:
    """Sample Pearson r and the least-squares line of y on x.

    Raises DegenerateInput when either variable is constant (r undefined).
    """
    xv = np.asarray(x, dtype=np.float64).ravel()
    yv = np.asarray(y, dtype=np.float64).ravel()
    if xv.size != yv.size:
        raise LengthMismatch(f"samples differ in length: {xv.size} vs {yv.size}")
    if xv.size < 2:
        raise EmptyInput("pearson_fit needs at least two points")
    dx = xv - xv.mean()
    dy = yv - yv.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInput("constant x or y makes the correlation undefined")
    sxy = float(np.dot(dx, dy))
    slope = sxy / sxx
    return PearsonFit(
        r=sxy / math.sqrt(sxx * syy),
        slope=slope,
        intercept=float(yv.mean() - slope * xv.mean()),
    )
