"""Fiber-bunching margins, numerical stable/unstable holonomies, equivariance
residuals, and the pinching/twisting predicate at periodic/homoclinic data.

Holonomies are providers: callables (x_window, y_window) -> matrix.  The
closed-form providers for the two-u-state example and the truncated-limit
provider are interchangeable downstream.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from cocyclelab.cocycle import REMARK_DIAG, ScaledMatrix, WindowTooSmall, product
from cocyclelab.subshift import PointWindow, enumerate_words, shift_window


@dataclass(frozen=True)
class HolonomyResult:
    matrix: np.ndarray
    truncation_n: int
    residual: float
    converged: bool


def bunching_margin(cocycle, theta, nu, k_max, cap=None):
    """Fiber-bunching margins max_w ||M^k|| ||(M^k)^{-1}|| theta^{nu k}.

    Returns (margin, k) for the first k with margin < 1 (bunched), else the
    minimizing k; bunched iff the returned margin is < 1.
    """
    if not 0 < theta < 1 or nu <= 0 or k_max < 1:
        raise ValueError("need theta in (0,1), nu > 0, k_max >= 1")
    l, r = cocycle.left_range, cocycle.right_range
    best = (float("inf"), 0)
    margins = []
    for k in range(1, k_max + 1):
        worst = 0.0
        for w in enumerate_words(cocycle.spec, k + l + r, cap=cap):
            win = PointWindow(-l, w)
            mat = product(cocycle, win, k)
            s = np.linalg.svd(mat.unit, compute_uv=False)
            worst = max(worst, (s[0] / s[-1]) * theta ** (nu * k))
        margins.append(worst)
        if worst < best[0]:
            best = (worst, k)
        if worst < 1.0:
            return worst, k
    return best


def stable_holonomy(cocycle, x, y, n_max, tol=1e-10):
    """Truncated limit H_n = M^n(y)^{-1} M^n(x) for y on the local stable
    set of x (same coordinates >= 0).

    Stops at the first n with ||H_n - H_{n-1}|| <= tol; reports divergence
    when the residual grows for 5 consecutive steps past norm 1.
    """
    lo = min(x.start_index, y.start_index)
    hi = min(x.end_index, y.end_index)
    for t in range(max(0, lo), hi + 1):
        if x.get(t) != y.get(t):
            raise ValueError(f"windows disagree at coordinate {t} >= 0")
    px = ScaledMatrix.identity(cocycle.dimension)
    py = ScaledMatrix.identity(cocycle.dimension)
    prev = np.eye(cocycle.dimension)
    last_res = None
    growth = 0
    for n in range(1, n_max + 1):
        px = ScaledMatrix.of(cocycle.generator_at(x, n - 1) @ px.unit, px.log_scale)
        py = ScaledMatrix.of(cocycle.generator_at(y, n - 1) @ py.unit, py.log_scale)
        h = np.linalg.inv(py.unit) @ px.unit * np.exp(px.log_scale - py.log_scale)
        res = float(np.linalg.norm(h - prev, ord=2))
        if res <= tol:
            return HolonomyResult(matrix=h, truncation_n=n, residual=res, converged=True)
        growth = growth + 1 if (last_res is not None and res > last_res) else 0
        if growth >= 5 and res > max(1.0, 10 * tol):
            return HolonomyResult(matrix=h, truncation_n=n, residual=res, converged=False)
        last_res = res
        prev = h
    return HolonomyResult(matrix=prev, truncation_n=n_max, residual=last_res or 0.0,
                          converged=False)


def unstable_holonomy(cocycle, x, y, n_max, tol=1e-10):
    """Truncated limit M^n(T^{-n} y) M^n(T^{-n} x)^{-1} for y on the local
    unstable set of x (same coordinates <= 0)."""
    lo = max(x.start_index, y.start_index)
    for t in range(lo, 1):
        if x.get(t) != y.get(t):
            raise ValueError(f"windows disagree at coordinate {t} <= 0")
    px = ScaledMatrix.identity(cocycle.dimension)
    py = ScaledMatrix.identity(cocycle.dimension)
    prev = np.eye(cocycle.dimension)
    last_res = None
    growth = 0
    for n in range(1, n_max + 1):
        px = ScaledMatrix.of(px.unit @ cocycle.generator_at(x, -n), px.log_scale)
        py = ScaledMatrix.of(py.unit @ cocycle.generator_at(y, -n), py.log_scale)
        h = py.unit @ np.linalg.inv(px.unit) * np.exp(py.log_scale - px.log_scale)
        res = float(np.linalg.norm(h - prev, ord=2))
        if res <= tol:
            return HolonomyResult(matrix=h, truncation_n=n, residual=res, converged=True)
        growth = growth + 1 if (last_res is not None and res > last_res) else 0
        if growth >= 5 and res > max(1.0, 10 * tol):
            return HolonomyResult(matrix=h, truncation_n=n, residual=res, converged=False)
        last_res = res
        prev = h
    return HolonomyResult(matrix=prev, truncation_n=n_max, residual=last_res or 0.0,
                          converged=False)


# ---------------------------------------------------------------------------
# closed-form holonomies of the constant diag(3,2,1) example

def remark39_stable(x, y):
    """Lower-triangular H^s with entries sum 3^n (y_n - x_n), sum 2^n (y_n - x_n)
    over the nonpositive coordinates both windows carry."""
    lo = max(x.start_index, y.start_index)
    s3 = sum(3.0 ** n * (y.get(n) - x.get(n)) for n in range(lo, 1))
    s2 = sum(2.0 ** n * (y.get(n) - x.get(n)) for n in range(lo, 1))
    h = np.eye(3)
    h[2, 0], h[2, 1] = s3, s2
    return h


def remark39_unstable(x, y):
    """Upper-triangular H^u with entries sum 3^{-n} (y_n - x_n),
    sum 2^{-n} (y_n - x_n) over the nonnegative coordinates."""
    hi = min(x.end_index, y.end_index)
    u3 = sum(3.0 ** -n * (y.get(n) - x.get(n)) for n in range(0, hi + 1))
    u2 = sum(2.0 ** -n * (y.get(n) - x.get(n)) for n in range(0, hi + 1))
    h = np.eye(3)
    h[0, 2], h[1, 2] = u3, u2
    return h


def truncated_stable_provider(cocycle, n_max, tol=1e-10):
    def provider(x, y):
        res = stable_holonomy(cocycle, x, y, n_max, tol)
        if not res.converged:
            raise RuntimeError(f"stable holonomy did not converge (residual {res.residual})")
        return res.matrix
    return provider


def equivariance_residual(cocycle, h_provider, pairs):
    """max over same-stable pairs of || M(y) H_{x->y} - H_{Tx->Ty} M(x) ||."""
    worst = 0.0
    for x, y in pairs:
        h_xy = h_provider(x, y)
        h_txy = h_provider(shift_window(x, 1), shift_window(y, 1))
        lhs = cocycle.generator_at(y, 0) @ h_xy
        rhs = h_txy @ cocycle.generator_at(x, 0)
        worst = max(worst, float(np.linalg.norm(lhs - rhs, ord=2)))
    return worst


# ---------------------------------------------------------------------------
# pinching and twisting

@dataclass(frozen=True)
class PinchingTwistingReport:
    period: int
    eigenvalues: np.ndarray
    pinching: bool
    homoclinic_length: int
    psi: np.ndarray             # None when pinching fails
    twisting_checks: tuple      # (U indices, V indices, smallest sv, pass)
    verdict: bool


def homoclinic_windows(spec, p_word, splice, copies=8):
    """Windows for the periodic point p and the homoclinic point q obtained
    by splicing `splice` at coordinates 1..len(splice); returns (p, q, i)
    with T^i q on the local stable set of p, i the splice length rounded up
    to a multiple of the period."""
    k = len(p_word)
    s = len(splice)
    i = k * (s // k + 1)
    start, end = -copies * k, i + copies * k
    p_sym = [p_word[n % k] for n in range(start, end + 1)]
    q_sym = [splice[n - 1] if 1 <= n <= s else p_word[n % k]
             for n in range(start, end + 1)]
    p = PointWindow(start, p_sym)
    q = PointWindow(start, q_sym)
    if not q.admissible(spec):
        raise ValueError("homoclinic route is not admissible")
    assert all(q.get(t) == p.get(t) for t in range(start, 1))
    assert all(q.get(t) == p.get(t) for t in range(i, end + 1))
    return p, q, i


def pinching_twisting_check(cocycle, h_s, h_u, p_word, splice, tol=1e-8,
                            copies=8):
    """Avila-Viana pinching/twisting at a periodic point with a homoclinic
    connection given by a splice word.

    Pinching: all eigenvalues of M^k(p) real with pairwise relative gaps
    above tol.  Twisting: for every pair (U, V) of eigenspace unions with
    dim U + dim V = d, the transition map Psi = H^s o M^i(q) o H^u puts
    Psi(U) transverse to V (smallest singular value of the stacked bases
    above tol).
    """
    spec = cocycle.spec
    k = len(p_word)
    p, q, i = homoclinic_windows(spec, p_word, splice, copies=copies)
    mk = product(cocycle, p, k).dense()
    eig, vecs = np.linalg.eig(mk)
    real = np.all(np.abs(eig.imag) <= tol * np.abs(eig).max())
    ev = np.sort(eig.real)[::-1] if real else eig
    distinct = real and all(
        abs(a - b) > tol * max(abs(a), abs(b), 1e-30)
        for a, b in combinations(eig.real, 2))
    pinching = bool(real and distinct)
    if not pinching:
        return PinchingTwistingReport(period=k, eigenvalues=eig, pinching=False,
                                      homoclinic_length=i, psi=None,
                                      twisting_checks=(), verdict=False)
    order = np.argsort(-eig.real)
    basis = np.real(vecs[:, order])
    basis = basis / np.linalg.norm(basis, axis=0)
    d = cocycle.dimension
    mi = product(cocycle, q, i).dense()
    ti_q = shift_window(q, i)
    psi = h_s(ti_q, p) @ mi @ h_u(p, q)
    checks = []
    ok = True
    for ru in range(1, d):
        for U in combinations(range(d), ru):
            for V in combinations(range(d), d - ru):
                bu = psi @ basis[:, U]
                bu = bu / np.linalg.norm(bu, axis=0)
                bv = basis[:, V]
                stack = np.hstack([bu, bv])
                sv = np.linalg.svd(stack, compute_uv=False)[-1]
                passed = sv > tol
                ok = ok and passed
                checks.append((U, V, float(sv), bool(passed)))
    return PinchingTwistingReport(period=k, eigenvalues=ev, pinching=True,
                                  homoclinic_length=i, psi=psi,
                                  twisting_checks=tuple(checks), verdict=bool(ok))
