"""Large-deviation probabilities for Birkhoff sums and cocycle norms,
decay-rate fitting, the subadditive dominator, and return-time statistics.

Deviation events use the strict tube: a point deviates when
|log ||Lambda^i M^n|| - n * target| > n * eps, so eps = 0 measures the
probability of any deviation at all.
"""

from dataclasses import dataclass

import numpy as np

from cocyclelab.cocycle import (WindowTooSmall, _batched_log_exterior_norms,
                                product, singular_flags)
from cocyclelab.gibbs import cylinder_measure, sample_two_sided
from cocyclelab.linalg import intersect, min_principal_angle
from cocyclelab.pesin import Refusal, a_epsilon
from cocyclelab.rng import as_streams
from cocyclelab.subshift import enumerate_words, window_from_array

Z95 = 1.959963984540054


def wilson_interval(hits, trials):
    """95% Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 1.0
    p = hits / trials
    z2 = Z95 * Z95
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    half = Z95 * np.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class DeviationPoint:
    n: int
    eps: float
    i: object              # exterior index, or "birkhoff"
    probability: float
    method: str            # "exact" | "mc"
    ci_low: float
    ci_high: float


def _targets(lyap, i, n):
    lam = np.asarray(lyap, dtype=float)
    if n >= 0:
        return float(np.cumsum(lam)[i - 1])
    return float(np.cumsum(lam[::-1])[i - 1])


def _log_ext_norm(cocycle, window, n, i):
    mat = product(cocycle, window, n)
    logs = np.sort(mat.log_singular_values())[::-1]
    return float(np.cumsum(logs)[i - 1])


def deviation_prob_exact(cocycle, model, i, n, eps, lyap, cap=None):
    """Exact Gibbs measure of the deviation event at time n (signed)."""
    if n == 0:
        raise ValueError("n must be nonzero")
    l, r = cocycle.left_range, cocycle.right_range
    length = abs(n) + l + r
    words = enumerate_words(cocycle.spec, length, cap=cap)
    target = _targets(lyap, i, n)
    base = -l if n > 0 else n - l
    fast = n > 0 and len(words) > 512
    prob = 0.0
    if fast:
        arr = np.array(words, dtype=np.int64)
        logs = _batched_log_exterior_norms(cocycle, arr, n)[:, i - 1]
        mus = np.array([cylinder_measure(model, w) for w in words])
        dev = np.abs(logs - n * target)
        prob = float(mus[dev > abs(n) * eps].sum())
    else:
        for w in words:
            win = window_from_array(base, np.array(w))
            dev = abs(_log_ext_norm(cocycle, win, n, i) - n * target)
            if dev > abs(n) * eps:
                prob += cylinder_measure(model, w)
    return DeviationPoint(n=n, eps=eps, i=i, probability=min(1.0, prob),
                          method="exact", ci_low=min(1.0, prob), ci_high=min(1.0, prob))


def deviation_prob_mc(cocycle, model, i, n, eps, lyap, samples, rng):
    """Monte-Carlo estimate of the deviation probability with a Wilson 95%
    interval; one Philox stream per fixed-size chunk of samples."""
    if samples < 100:
        raise ValueError("need samples >= 100")
    if n == 0:
        raise ValueError("n must be nonzero")
    streams = as_streams(rng)
    l, r = cocycle.left_range, cocycle.right_range
    target = _targets(lyap, i, n)
    hits = 0
    done = 0
    chunk_id = 0
    chunk = 256
    while done < samples:
        take = min(chunk, samples - done)
        gen = streams.stream(chunk_id)
        if n > 0:
            sym = sample_two_sided(model, gen, l, n - 1 + r, batch=take)
            logs = _batched_log_exterior_norms(cocycle, sym, n)[:, i - 1]
        else:
            sym = sample_two_sided(model, gen, -n + l, r, batch=take)
            logs = np.empty(take)
            for b in range(take):
                win = window_from_array(n - l, sym[b])
                logs[b] = _log_ext_norm(cocycle, win, n, i)
        hits += int((np.abs(logs - n * target) > abs(n) * eps).sum())
        done += take
        chunk_id += 1
    p = hits / samples
    lo, hi = wilson_interval(hits, samples)
    return DeviationPoint(n=n, eps=eps, i=i, probability=p, method="mc",
                          ci_low=lo, ci_high=hi)


def birkhoff_deviation_exact(model, observable, n, eps):
    """Exact deviation probability of Birkhoff sums of a range-1 observable
    (symbol -> value): |S_n f - n mean| > n eps under the Gibbs measure."""
    words = enumerate_words(model.spec, n)
    vals = np.array([sum(observable(a) for a in w) for w in words])
    mus = np.array([cylinder_measure(model, w) for w in words])
    mean = float(sum(cylinder_measure(model, (a,)) * observable(a)
                     for a in range(model.spec.alphabet_size)))
    dev = np.abs(vals - n * mean)
    prob = float(mus[dev > n * eps].sum())
    return DeviationPoint(n=n, eps=eps, i="birkhoff", probability=prob,
                          method="exact", ci_low=prob, ci_high=prob)


@dataclass(frozen=True)
class RateFit:
    points: tuple
    slope: float           # decay rate of -d(log p)/dn; inf when zeros occur
    intercept: float
    r_squared: float
    verdict: str           # "exponential" | "subexponential" | "inconclusive"


def rate_profile(points):
    """Classify the decay of deviation probabilities.

    Least-squares fit of log p_n against n.  Verdict rule: any zero
    probability short-circuits to "exponential" with infinite slope;
    otherwise "exponential" when slope > 0.02 and R^2 > 0.9,
    "subexponential" when slope < 0.005 or slope * n_max < 0.5, else
    "inconclusive".
    """
    pts = tuple(sorted(points, key=lambda p: p.n))
    if any(p.probability == 0.0 for p in pts):
        return RateFit(points=pts, slope=float("inf"), intercept=0.0,
                       r_squared=1.0, verdict="exponential")
    if len(pts) < 4:
        raise ValueError("need at least 4 positive-probability points")
    x = np.array([p.n for p in pts], dtype=float)
    y = np.log(np.array([p.probability for p in pts]))
    slope_fit, intercept = np.polyfit(x, y, 1)
    resid = y - (slope_fit * x + intercept)
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid ** 2).sum() / ss_tot if ss_tot > 0 else 1.0
    rate = -slope_fit
    if rate > 0.02 and r2 > 0.9:
        verdict = "exponential"
    elif rate < 0.005 or rate * x.max() < 0.5:
        verdict = "subexponential"
    else:
        verdict = "inconclusive"
    return RateFit(points=pts, slope=float(rate), intercept=float(intercept),
                   r_squared=float(r2), verdict=verdict)


# ---------------------------------------------------------------------------
# returns to Pesin-like sets

def truncated_pesin_a(cocycle, window, lyap, eps, rho, horizon, gap_tol=None):
    """Truncated A_eps at the window's origin, via flag intersection at the
    working horizon; returns +inf when the finite data cannot certify the
    splitting (grouping or transversality failure)."""
    from cocyclelab.pesin import _block_structure, _min_gap
    g = _min_gap(lyap)
    if gap_tol is None:
        gap_tol = g / 2.0
    starts, mult, exps = _block_structure(lyap, g / 2.0)
    try:
        fwd = singular_flags(cocycle, window, horizon, gap_tol)
        bwd = singular_flags(cocycle, window, -horizon, gap_tol)
    except WindowTooSmall:
        raise
    if tuple(len(i) for i, _ in fwd.blocks) != mult or \
       tuple(len(i) for i, _ in bwd.blocks) != mult:
        return float("inf")
    subspaces = []
    for bi, start in enumerate(starts):
        end = start + mult[bi] - 1
        fg = fwd.flag_geq(start)
        fl_strict = bwd.flag_lt(start)
        if fl_strict is not None and min_principal_angle(fg, fl_strict) < rho:
            return float("inf")
        ei = intersect(fg, bwd.flag_leq(end), tol=1e-8 / max(np.sin(rho), 1e-6))
        if ei.dim != mult[bi]:
            return float("inf")
        subspaces.append((exps[bi], ei))
    return a_epsilon(cocycle, window, eps, subspaces, horizon)


@dataclass(frozen=True)
class ReturnStatistic:
    n: int
    delta: float
    C_thresh: float
    probability: float
    ci_low: float
    ci_high: float
    fractions: np.ndarray       # per-sample fraction of bad times
    histogram: tuple            # (bin_edges, counts)


def return_statistic(kind, params, model, n, C_thresh, delta, samples, horizon, rng):
    """Estimate mu{ x : #{ j < n : test(T^j x) > C_thresh } >= delta n }.

    kind "subadditive": params carries `u(k, window, t)` (the cocycle value
    at T^t x) and `eps`; the per-time test is the truncated return function
    max_{0<=k<=horizon} |u(k, .)| - eps k.
    kind "pesin": params carries `cocycle`, `lyap`, `eps`, `rho`; the test
    is the truncated A_eps with refusals counted as bad times.
    """
    streams = as_streams(rng)
    if kind == "subadditive":
        u, eps = params["u"], params["eps"]
        left, right = params.get("left", 0), params.get("right", n + horizon)

        def test(window, t):
            return max(abs(u(k, window, t)) - eps * k for k in range(horizon + 1))
    elif kind == "pesin":
        cocycle, lyap = params["cocycle"], params["lyap"]
        eps, rho = params["eps"], params["rho"]
        l, r = cocycle.left_range, cocycle.right_range
        left = horizon + l
        right = n + horizon + r

        def test(window, t):
            from cocyclelab.subshift import shift_window
            return truncated_pesin_a(cocycle, shift_window(window, t), lyap,
                                     eps, rho, horizon)
    else:
        raise ValueError(f"unknown return_statistic kind {kind!r}")

    fractions = np.empty(samples)
    for s in range(samples):
        gen = streams.stream(s)
        sym = sample_two_sided(model, gen, left, right, batch=1)[0]
        window = window_from_array(-left, sym)
        bad = sum(1 for j in range(n) if test(window, j) > C_thresh)
        fractions[s] = bad / n
    hits = int((fractions >= delta).sum())
    p = hits / samples
    lo, hi = wilson_interval(hits, samples)
    edges = np.linspace(0.0, 1.0, 21)
    counts, _ = np.histogram(fractions, bins=edges)
    return ReturnStatistic(n=n, delta=delta, C_thresh=C_thresh, probability=p,
                           ci_low=lo, ci_high=hi, fractions=fractions,
                           histogram=(edges, counts))


def subadditive_dominator(a_eval, model, N, n_max, samples, rng, left=0, right=None):
    """Empirical constant C = max over sampled (n <= n_max, x) of
    a(n, x) - S_n(a_N / N)(x); zero for additive cocycles."""
    streams = as_streams(rng)
    right = (n_max + N) if right is None else right
    best = 0.0
    for s in range(samples):
        gen = streams.stream(s)
        sym = sample_two_sided(model, gen, left, right, batch=1)[0]
        window = window_from_array(-left, sym)
        aN = [a_eval(N, window, j) for j in range(n_max)]
        for n in range(1, n_max + 1):
            sn = sum(aN[j] for j in range(n)) / N
            gap = a_eval(n, window, 0) - sn
            if gap > best:
                best = gap
    return float(best)
