"""Finite-horizon Pesin functions and deterministic Oseledets reconstruction.

Every supremum here is a truncation over a stated horizon; results carry
the horizon so downstream checks can reason about what was actually
computed.
"""

from dataclasses import dataclass
from math import ceil

import numpy as np

from cocyclelab.cocycle import ScaledMatrix, WindowTooSmall, singular_flags
from cocyclelab.linalg import (Subspace, grassmann_distance, intersect,
                               min_principal_angle)


@dataclass(frozen=True)
class PesinEvaluation:
    horizon: int
    eps: float
    per_index: dict      # (i, '+'|'-') -> (value, argmax signed n)
    total: float

    def argmax(self):
        (i, sign), (val, n) = max(self.per_index.items(), key=lambda kv: kv[1][0])
        return i, sign, val, n


@dataclass(frozen=True)
class Refusal:
    reason: str     # b_bound | block_grouping | cauchy | angle_witness | intersection_dim
    detail: object

    def __bool__(self):
        return False


@dataclass(frozen=True)
class OseledetsEstimate:
    eps: float
    C: float
    rho: float
    N1: int
    flags_horizon: int
    blocks: tuple               # block-start indices (1-based), one per i in I
    multiplicities: tuple
    E: tuple                    # (block-start index, Subspace)
    exponents: tuple            # distinct exponent per block
    angle_witnesses: dict       # i -> (m, angle)
    D: float
    K_hat: float                # fitted Cauchy prefactor
    K4_fit: float               # fitted two-sided growth-envelope constant
    diagnostics: tuple          # rows (sign, i, n, distance to final flag)


def _log_exterior_partials(logsv):
    """Partial sums of log singular values: entry i-1 is log ||Lambda^i||."""
    return np.cumsum(logsv)


def _forward_scan(cocycle, window, horizon, sign):
    """Yield (n, ScaledMatrix M^{sign*n}(x)) for n = 1..horizon, incrementally.

    For sign=-1 the pullback product M^n(T^{-n}x) is accumulated and
    inverted (singular data only needs the forward factors).
    """
    acc = ScaledMatrix.identity(cocycle.dimension)
    for n in range(1, horizon + 1):
        if sign > 0:
            g = cocycle.generator_at(window, n - 1)
            acc = ScaledMatrix.of(g @ acc.unit, acc.log_scale)
            yield n, acc
        else:
            g = cocycle.generator_at(window, -n)
            acc = ScaledMatrix.of(acc.unit @ g, acc.log_scale)
            yield n, acc.inv()


def b_epsilon(cocycle, window, eps, lyap, horizon):
    """Two-sided deviation suprema of log ||Lambda^i M^n(x)|| over
    |n| <= horizon, per exterior index i and time sign.

    Positive times compare against the head sums lam_1+...+lam_i; negative
    times against the tail sums lam_d+...+lam_{d-i+1}.
    """
    lam = np.asarray(lyap, dtype=float)
    d = cocycle.dimension
    if len(lam) != d or np.any(np.diff(lam) > 1e-12):
        raise ValueError("lyap must list all d exponents, nonincreasing")
    lo, hi = -horizon - cocycle.left_range, horizon + cocycle.right_range
    if not window.covers(lo, hi):
        raise WindowTooSmall(lo, hi, window)
    head = np.cumsum(lam)
    tail = np.cumsum(lam[::-1])
    per = {}
    for i in range(1, d + 1):
        per[(i, "+")] = (0.0, 0)
        per[(i, "-")] = (0.0, 0)
    for sign, targets in (("+", head), ("-", tail)):
        s = 1 if sign == "+" else -1
        for n, mat in _forward_scan(cocycle, window, horizon, s):
            partial = _log_exterior_partials(mat.log_singular_values())
            for i in range(1, d + 1):
                val = abs(partial[i - 1] - s * n * targets[i - 1]) - n * eps
                if val > per[(i, sign)][0]:
                    per[(i, sign)] = (float(val), s * n)
    total = max(v for v, _ in per.values())
    return PesinEvaluation(horizon=horizon, eps=eps, per_index=per, total=float(total))


def _evolved_bases(cocycle, window, bases, horizon):
    """R-factors and log scales of M^t(x) B for t in [-horizon, horizon].

    Returns dict t -> list of (R, logscale) per subspace basis; the QR
    Q-factor is dropped since only coefficient-space ratios are needed.
    """
    d = cocycle.dimension
    out = {}

    def reduce(mats, logs):
        row = []
        for m, lg in zip(mats, logs):
            q, r = np.linalg.qr(m)
            if np.abs(np.diag(r)).min() <= 1e-300:
                raise ValueError("rank collapse while evolving a basis")
            row.append((r, lg))
        return row

    cur = [b.copy() for b in bases]
    logs = [0.0] * len(bases)
    out[0] = reduce(cur, logs)
    for t in range(1, horizon + 1):
        g = cocycle.generator_at(window, t - 1)
        for j in range(len(cur)):
            cur[j] = g @ cur[j]
            nrm = np.linalg.norm(cur[j])
            cur[j] /= nrm
            logs[j] += np.log(nrm)
        out[t] = reduce(cur, logs)
    cur = [b.copy() for b in bases]
    logs = [0.0] * len(bases)
    inv_cache = {}
    for t in range(1, horizon + 1):
        w = tuple(window.slice(-t - cocycle.left_range, -t + cocycle.right_range))
        if w not in inv_cache:
            inv_cache[w] = np.linalg.inv(cocycle.generator(w))
        gi = inv_cache[w]
        for j in range(len(cur)):
            cur[j] = gi @ cur[j]
            nrm = np.linalg.norm(cur[j])
            cur[j] /= nrm
            logs[j] += np.log(nrm)
        out[-t] = reduce(cur, logs)
    return out


def a_epsilon(cocycle, window, eps, subspaces, horizon):
    """Truncated Pesin regularity function.

    subspaces: list of (lambda_i, Subspace).  Returns the max over i and
    m, n in [-horizon, horizon] of

        ratio_norm(M^n B_i, M^m B_i) * e^{-(n-m) lambda_i}
                                     * e^{-(|n|+|m|) eps / 2},

    computed in log space on QR-reduced coefficient factors.  The value is
    >= 1 because the pair m = n = 0 contributes exactly 1.
    """
    lo, hi = -horizon - cocycle.left_range, horizon + cocycle.right_range
    if not window.covers(lo, hi):
        raise WindowTooSmall(lo, hi, window)
    bases = [sp.basis for _, sp in subspaces]
    lams = [lam for lam, _ in subspaces]
    evolved = _evolved_bases(cocycle, window, bases, horizon)
    ts = list(range(-horizon, horizon + 1))
    best = 0.0
    tarr = np.array(ts)
    for j, lam in enumerate(lams):
        rs = {t: evolved[t][j] for t in ts}
        k = bases[j].shape[1]
        if k == 1:
            # scalar coefficients: the pair max separates into max_n - min_m
            logv = np.array([np.log(abs(rs[t][0][0, 0])) + rs[t][1] for t in ts])
            f = logv - tarr * lam - np.abs(tarr) * eps / 2.0
            g = logv - tarr * lam + np.abs(tarr) * eps / 2.0
            best = max(best, f.max() - g.min())
            continue
        inv = {t: np.linalg.inv(rs[t][0]) for t in ts}
        for n in ts:
            rn, ln = rs[n]
            for m in ts:
                _, lm = rs[m]
                ratio = np.linalg.norm(rn @ inv[m], ord=2)
                val = (np.log(ratio) + (ln - lm)
                       - (n - m) * lam - (abs(n) + abs(m)) * eps / 2.0)
                if val > best:
                    best = val
    return float(np.exp(best))


def _block_structure(lyap, gap_tol):
    """Block-start indices (1-based) and multiplicities from an exponent list."""
    lam = np.asarray(lyap, dtype=float)
    starts, mult, exps = [1], [1], [lam[0]]
    for j in range(1, len(lam)):
        if lam[j - 1] - lam[j] >= gap_tol:
            starts.append(j + 1)
            mult.append(1)
            exps.append(lam[j])
        else:
            mult[-1] += 1
    return tuple(starts), tuple(mult), tuple(exps)


def _min_gap(lyap):
    lam = np.asarray(lyap, dtype=float)
    gaps = [lam[i] - lam[j] for i in range(len(lam)) for j in range(i + 1, len(lam))
            if lam[i] - lam[j] > 1e-12]
    if not gaps:
        raise ValueError("all Lyapunov exponents coincide; no gap to resolve")
    return min(gaps)


def deterministic_oseledets(cocycle, window, eps, C, rho, horizon, lyap,
                            gap_tol=None):
    """Deterministic Oseledets reconstruction from finite data.

    Follows the staged recipe: verify the B_eps bound, compute singular
    flags for N1 <= |n| <= horizon with N1 = ceil(2C/eps), check Cauchy
    decay of the flags at the proof's exponent, find per-block angle
    witnesses, intersect the extreme flags, and bound the Pesin function
    A_{20 d eps}.  Returns an OseledetsEstimate or a structured Refusal.
    """
    d = cocycle.dimension
    g = _min_gap(lyap)
    if not eps < g / (20 * d):
        raise ValueError(f"eps={eps} must be below (min gap)/(20 d) = {g / (20 * d):.6g}")
    if gap_tol is None:
        gap_tol = g / 2.0
    starts, mult, exps = _block_structure(lyap, g / 2.0)

    ev = b_epsilon(cocycle, window, eps, lyap, horizon)
    if ev.total > C:
        i, sign, val, n = ev.argmax()
        return Refusal("b_bound", {"i": i, "sign": sign, "value": val, "n": n})

    N1 = int(ceil(2.0 * C / eps))
    if N1 > horizon:
        return Refusal("angle_witness",
                       {"why": "flag range [N1, horizon] empty", "N1": N1,
                        "horizon": horizon})

    flags = {}
    for s in (+1, -1):
        for n in range(N1, horizon + 1):
            f = singular_flags(cocycle, window, s * n, gap_tol)
            dims = tuple(len(idx) for idx, _ in f.blocks)
            if dims != mult:
                return Refusal("block_grouping",
                               {"n": s * n, "observed": dims, "expected": mult})
            flags[s * n] = f

    delta = g - 6.0 * (d - 1) * eps
    ns = list(range(N1, horizon + 1))
    mid = ns[max(0, len(ns) // 2 - 1)]
    K_hat = 0.0
    diagnostics = []
    for s in (+1, -1):
        for bi, start in enumerate(starts):
            final = flags[s * horizon].blocks[bi][1]
            for a in range(len(ns)):
                fa = flags[s * ns[a]].blocks[bi][1]
                diagnostics.append((s, start, ns[a],
                                    float(grassmann_distance(fa, final))))
                for b in range(a + 1, len(ns)):
                    dist = grassmann_distance(fa, flags[s * ns[b]].blocks[bi][1])
                    pref = dist * np.exp(delta * ns[a])
                    if ns[a] <= mid:
                        K_hat = max(K_hat, pref)
                    elif dist > 0 and pref > K_hat * (1.0 + 1e-9) and K_hat > 0:
                        return Refusal("cauchy",
                                       {"i": start, "sign": s, "n": ns[a],
                                        "n2": ns[b], "distance": dist,
                                        "allowed": K_hat * np.exp(-delta * ns[a])})

    witnesses = {}
    for bi, start in enumerate(starts):
        if start == 1:
            witnesses[start] = (N1, float(np.pi / 2))
            continue
        found = None
        for m in ns:
            fg = flags[m].flag_geq(start)
            fl = flags[-m].flag_lt(start)
            ang = min_principal_angle(fg, fl)
            if ang >= rho:
                found = (m, float(ang))
                break
        if found is None:
            return Refusal("angle_witness", {"i": start, "rho": rho})
        witnesses[start] = found

    E = []
    for bi, start in enumerate(starts):
        end = start + mult[bi] - 1
        fg = flags[horizon].flag_geq(start)
        fl = flags[-horizon].flag_leq(end)
        ang = witnesses[start][1]
        tol = 1e-8 / max(np.sin(ang), 1e-6)
        ei = intersect(fg, fl, tol=tol)
        if ei.dim != mult[bi]:
            return Refusal("intersection_dim",
                           {"i": start, "expected": mult[bi], "got": ei.dim})
        E.append((start, ei))

    subspaces = [(exps[bi], ei) for bi, (_, ei) in enumerate(E)]
    D = a_epsilon(cocycle, window, 20.0 * d * eps, subspaces, horizon)

    K4_fit = _fit_step6_constant(cocycle, window, subspaces, eps, horizon)

    return OseledetsEstimate(eps=eps, C=C, rho=rho, N1=N1, flags_horizon=horizon,
                             blocks=starts, multiplicities=mult, E=tuple(E),
                             exponents=exps, angle_witnesses=witnesses, D=float(D),
                             K_hat=float(K_hat), K4_fit=float(K4_fit),
                             diagnostics=tuple(diagnostics))


def _fit_step6_constant(cocycle, window, subspaces, eps, horizon):
    """Smallest K with K^{-1} e^{k lam - 6 d eps |k|} <= ||M^k v|| <=
    K e^{k lam + 6 d eps |k|} over unit v in each reconstructed space."""
    d = cocycle.dimension
    bases = [sp.basis for _, sp in subspaces]
    lams = [lam for lam, _ in subspaces]
    evolved = _evolved_bases(cocycle, window, bases, horizon)
    K = 1.0
    for j, lam in enumerate(lams):
        r0, _ = evolved[0][j]
        r0inv = np.linalg.inv(r0)
        for k in range(-horizon, horizon + 1):
            rk, lk = evolved[k][j]
            coeff = rk @ r0inv
            smax = np.linalg.norm(coeff, ord=2)
            smin = np.linalg.svd(coeff, compute_uv=False)[-1]
            hi = lk + np.log(smax) - k * lam - 6 * d * eps * abs(k)
            lo = -(lk + np.log(smin)) + k * lam - 6 * d * eps * abs(k)
            K = max(K, np.exp(hi), np.exp(lo))
    return K


def backward_top_direction(cocycle, window, depth):
    """Pullback power-iteration estimate of the top Oseledets direction:
    the limit of M^k(T^{-k}x) applied to a generic vector."""
    d = cocycle.dimension
    v = np.ones(d) / np.sqrt(d)
    acc = v
    for j in range(depth, 0, -1):
        acc = cocycle.generator_at(window, -j) @ acc
        acc = acc / np.linalg.norm(acc)
    return Subspace.from_spanning(acc.reshape(d, 1))
