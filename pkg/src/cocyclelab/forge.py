"""Constructive counterexamples with machine-checkable certificates.

Two constructions over a full shift: the subadditive cocycle whose
deviation probabilities decay no faster than a prescribed sequence, and a
staged SL(2,R) modification of the diagonal/identity cocycle that caps the
norm on a certified bad set while keeping the top exponent above a floor.

Tower bases are first-return unions represented through their return law
(see towers.py); all stage certificates are exact sums over that law.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, logm

from cocyclelab.cocycle import CocycleTable, ScaledMatrix, lyapunov_estimate
from cocyclelab.gibbs import sample_two_sided
from cocyclelab.rng import as_streams
from cocyclelab.subshift import PointWindow, enumerate_words
from cocyclelab.towers import (TowerError, build_tower, kmp_failure,
                               kmp_transition_table)


class StageError(RuntimeError):
    """A stage certificate failed or no feasible scale exists; the message
    names the certificate."""


# ---------------------------------------------------------------------------
# Proposition-A-style subadditive counterexample

@dataclass(frozen=True)
class SubadditiveStage:
    index: int
    n: int
    K: int
    tower: object
    c: float
    bad_offsets: tuple        # tower offsets of the certified bad slices
    support_offsets: tuple    # tower offsets where f_i = -c
    integral: float
    bad_measure: float

    def f_value(self, window, t, starts=None):
        """f_i at T^t x: -c on the support slice union, 0 elsewhere."""
        if self.tower.in_floor_set(window, t, self.support_offsets, starts=starts):
            return -self.c
        return 0.0

    def in_bad_set(self, window, t=0, starts=None):
        return self.tower.in_floor_set(window, t, self.bad_offsets, starts=starts)


@dataclass(frozen=True)
class SubadditiveFamily:
    stages: tuple

    def evaluate(self, n, window, t0=0):
        """a(n, x) = n + sum over stages with n_i <= n of S_n f_i at T^t0 x."""
        total = float(n)
        for st in self.stages:
            if st.n <= n:
                starts = st.tower.scan(window)
                total += sum(st.f_value(window, t0 + j, starts=starts)
                             for j in range(n))
        return total

    def window_margin(self):
        return max(st.tower.k_trunc + len(st.tower.word) + 1 for st in self.stages)


def build_subadditive_counterexample(spec, model, u, stages, delta=0.49,
                                     base_word_budget=32):
    """Stage family realizing slow large-deviation decay for a subadditive
    cocycle: stage i picks n_i with u(n_i) <= 2^{-i-3}, a tower of height
    K = 2^{i+2} n_i with mass above 1/2, and f_i = -c_i on the first
    K/2^{i+1} tower offsets with integral exactly -2^{-i}."""
    out = []
    prev_n = 0
    for i in range(1, stages + 1):
        n_i = prev_n + 1
        while u(n_i) > 2.0 ** (-i - 3):
            n_i += 1
        K = 2 ** (i + 2) * n_i
        tower = build_tower(spec, model, K, delta, base_word_budget)
        if not K * tower.mu_R > 0.5:
            raise StageError(f"stage {i}: tower mass {K * tower.mu_R:.6f} not above 1/2")
        support = tuple(range(K // 2 ** (i + 1)))
        bad = tuple(range(K // 2 ** (i + 2)))
        support_measure = len(support) * tower.mu_R
        c = 2.0 ** (-i) / support_measure
        if not c >= 2.0:
            raise StageError(f"stage {i}: c = {c:.6f} below 2")
        integral = -c * support_measure
        bad_measure = len(bad) * tower.mu_R
        if not bad_measure >= u(n_i):
            raise StageError(f"stage {i}: bad-set measure {bad_measure:.3e} "
                             f"below u({n_i}) = {u(n_i):.3e}")
        if abs(integral + 2.0 ** (-i)) > 1e-12:
            raise StageError(f"stage {i}: integral {integral} != -2^-{i}")
        out.append(SubadditiveStage(index=i, n=n_i, K=K, tower=tower, c=c,
                                    bad_offsets=bad, support_offsets=support,
                                    integral=integral, bad_measure=bad_measure))
        prev_n = n_i
    return SubadditiveFamily(stages=tuple(out))


def _run_breaking_filler(word, length):
    """Length-`length` continuation carrying no occurrence of the
    constant-run base word even when flanked by copies of it: the opposite
    symbol opens and closes the filler and recurs before any run completes."""
    if length == 0:
        return []
    other = 1 - word[0]
    gap = max(len(word) - 1, 1)
    out = [other if (j % gap == 0 or j == length - 1) else word[0]
           for j in range(length)]
    return out


def bad_set_witnesses(stage, extra=0):
    """One explicit window per certified bad offset, with the point of the
    window lying in T^offset R; used for exact per-slice verification."""
    tower = stage.tower
    word = tower.word
    ell = len(word)
    margin = tower.k_trunc + ell + 1 + extra
    out = []
    block_len = tower.height + ell      # one full floor plus slack
    filler = _run_breaking_filler(word, block_len - ell)
    block = list(word) + filler
    for o in stage.bad_offsets:
        reps_left = margin // block_len + 1
        reps_right = (margin + stage.n) // block_len + 2
        sym = block * reps_left + block * reps_right
        start = -(block_len * reps_left) - o
        win = PointWindow(start, sym)
        pk = tower.classify(win, 0)
        if pk is None or pk[0] != o or pk[1] != block_len:
            raise StageError(f"witness construction failed at offset {o}: {pk}")
        out.append((o, win))
    return out


# ---------------------------------------------------------------------------
# exchange paths (plane exchange inside identity regions)

QUARTER_TURN = np.array([[0.0, -1.0], [1.0, 0.0]])


def _real_sl2_log(g):
    for cand in (g, -g):
        val = logm(cand)
        if np.abs(val.imag).max() <= 1e-9:
            lg = val.real
            return lg - np.eye(2) * np.trace(lg) / 2.0
    raise ValueError("target is outside the real-logarithm domain "
                     "after both sign choices")


def exchange_target(frame_in, frame_out):
    f_in = np.column_stack(frame_in).astype(float)
    f_out = np.column_stack(frame_out).astype(float)
    if abs(np.linalg.det(f_in)) < 1e-12 or abs(np.linalg.det(f_out)) < 1e-12:
        raise ValueError("frames must be bases")
    g = f_out @ QUARTER_TURN @ np.linalg.inv(f_in)
    g = g / np.sqrt(abs(np.linalg.det(g)))
    if np.linalg.det(g) < 0:
        g = g @ np.diag([1.0, -1.0])
    return g


def exchange_k_min(frame_in, frame_out, eps):
    lg = _real_sl2_log(exchange_target(frame_in, frame_out))
    return int(np.ceil(np.linalg.norm(lg, ord=2) / np.log1p(eps))) + 1


def exchange_path(frame_in, frame_out, k, eps):
    """SL(2,R) matrices Q_0..Q_{k-1} whose product carries the first frame
    line to the second output line and vice versa.

    The target G = F_out J F_in^{-1} (J the quarter turn) is det-normalized
    and sign-adjusted into the real-logarithm domain; each step is
    exp(log(G)/k).  Refuses when ||Q_j - Id|| would exceed eps, reporting
    the minimal usable k.
    """
    g = exchange_target(frame_in, frame_out)
    lg = _real_sl2_log(g)
    k_min = int(np.ceil(np.linalg.norm(lg, ord=2) / np.log1p(eps))) + 1
    if k < k_min:
        raise ValueError(f"k = {k} too small for eps = {eps}; need k >= {k_min}")
    q = expm(lg / k)
    step = np.linalg.norm(q - np.eye(2), ord=2)
    if step > eps:
        raise ValueError(f"step size {step:.3e} exceeds eps")
    sign = 1.0 if np.allclose(np.linalg.matrix_power(q, k), g, atol=1e-9) else -1.0
    prod = sign * np.linalg.matrix_power(q, k)
    if np.linalg.norm(prod - g, ord=2) > 1e-10:
        raise ValueError("exchange product drifted from its target")
    return [q.copy() for _ in range(k)]


# ---------------------------------------------------------------------------
# locally constant Oseledets line fields

def recover_line_fields(cocycle, window_range, tol=1e-8, samples=64, seed=0,
                        depth=None):
    """Locally constant unstable/stable line tables by pullback power
    iteration, verified for independence of coordinates beyond the reading
    window and for equivariance under the cocycle.

    `window_range` is the range over which extensions are varied for the
    independence check; iteration runs to `depth` (defaults to
    max(window_range, 96) so neutral stretches of the cocycle still leave
    enough contraction to resolve the directions).  Returns (e_u table,
    e_s table, residuals) keyed by the reading-window word; raises
    StageError when the direction spread across sampled extensions exceeds
    tol."""
    spec = cocycle.spec
    l, r = cocycle.left_range, cocycle.right_range
    core_len = l + r + 1
    depth = max(window_range, 96) if depth is None else depth
    rng = np.random.default_rng(seed)
    d = cocycle.dimension

    def directions(core, forward):
        dirs = []
        for _ in range(samples):
            ext_l = rng.integers(0, spec.alphabet_size, depth)
            ext_r = rng.integers(0, spec.alphabet_size, depth)
            sym = tuple(ext_l) + tuple(core) + tuple(ext_r)
            win = PointWindow(-depth - l, sym)
            if not win.admissible(spec):
                continue
            v = np.ones(d) / np.sqrt(d)
            if forward:   # unstable direction: push forward from the far past
                for j in range(-depth + l, 0):
                    v = cocycle.generator_at(win, j) @ v
                    v /= np.linalg.norm(v)
            else:         # stable direction: pull back from the far future
                for j in range(depth - r - 1, -1, -1):
                    v = np.linalg.solve(cocycle.generator_at(win, j), v)
                    v /= np.linalg.norm(v)
            if v[np.abs(v).argmax()] < 0:
                v = -v
            dirs.append(v)
        return dirs

    e_u, e_s = {}, {}
    spread = 0.0
    for core in enumerate_words(spec, core_len):
        for forward, table in ((True, e_u), (False, e_s)):
            dirs = directions(core, forward)
            if not dirs:
                continue
            ref = dirs[0]
            for v in dirs[1:]:
                spread = max(spread, float(min(np.linalg.norm(v - ref),
                                               np.linalg.norm(v + ref))))
            if spread > tol:
                raise StageError(f"line field not locally constant at range "
                                 f"{window_range}: spread {spread:.3e} on {core}")
            table[tuple(core)] = ref
    resid = _line_equivariance(cocycle, e_u), _line_equivariance(cocycle, e_s)
    return e_u, e_s, {"spread": spread, "equivariance": max(resid)}


def _line_equivariance(cocycle, table):
    """Direction equivariance of a locally constant line table: the image of
    e(w) under M(w) must align with e(w') for every admissible successor
    reading window w'."""
    spec = cocycle.spec
    l, r = cocycle.left_range, cocycle.right_range
    width = l + r + 1
    worst = 0.0
    for w in table:
        m = cocycle.generator(w)
        for b in range(spec.alphabet_size):
            ext = w + (b,)
            if not spec.word_admissible(ext):
                continue
            w2 = ext[1:]
            if w2 not in table:
                continue
            img = m @ table[w]
            img = img / np.linalg.norm(img)
            tgt = table[w2]
            worst = max(worst, float(min(np.linalg.norm(img - tgt),
                                         np.linalg.norm(img + tgt))))
    return worst


# ---------------------------------------------------------------------------
# in-block transfer machinery for stage measures

class BlockOperator:
    """One-step operator of the (symbol, KMP-match) chain inside a return
    block, with the base-word completion state split off as absorption."""

    def __init__(self, model, word):
        A = model.spec.alphabet_size
        ell = len(word)
        self.A, self.ell = A, ell
        trans = kmp_transition_table(word, A)
        size = A * (ell + 1)
        live = np.zeros((size, size))
        absorb = np.zeros((size, size))
        for a in range(A):
            for m in range(ell + 1):
                s = a * (ell + 1) + m
                for b in range(A):
                    w = model.kernel[a, b]
                    if w == 0.0:
                        continue
                    m2 = trans[m, b]
                    s2 = b * (ell + 1) + m2
                    (absorb if m2 == ell else live)[s2, s] += w
        self.live = live
        self.absorb_mass = absorb.sum(axis=0)     # functional alpha
        self.trans = trans
        self.word = word

    def start(self):
        fail = kmp_failure(self.word)
        v = np.zeros(self.A * (self.ell + 1))
        v[self.word[-1] * (self.ell + 1) + fail[self.ell]] = 1.0
        return v

    def step(self, v):
        return self.live @ v

    def absorb_cdf(self, max_t):
        """Functionals F_t with F_t . v = P(block ends within t more steps
        from state v); linear recursion F_t = F_{t-1} L + alpha."""
        size = self.live.shape[0]
        out = np.zeros((max_t + 1, size))
        for t in range(1, max_t + 1):
            out[t] = out[t - 1] @ self.live + self.absorb_mass
        return out


def _forced_push(op, model, v, pattern):
    """Advance the live distribution through forced symbols."""
    A, ell = op.A, op.ell
    kern = model.kernel
    trans = op.trans
    for b in pattern:
        nxt = np.zeros_like(v)
        for a in range(A):
            seg = v[a * (ell + 1):(a + 1) * (ell + 1)]
            if not seg.any():
                continue
            w = kern[a, b]
            if w == 0.0:
                continue
            base = b * (ell + 1)
            np.add.at(nxt, base + trans[:, b], w * seg)
        nxt[b * (ell + 1) + ell] = 0.0       # occurrence would end the block
        v = nxt
    return v


def bad_set_measure(model, tower, offset_a, pattern, bad_count):
    """Exact measure of the union over floors j and bad offsets i of the
    slices T^{j m + offset_a + i}(blocks whose floor-j stretch at offset_a
    carries the forced pattern).  offset_a must be >= len(word)."""
    word = tower.word
    ell = len(word)
    if offset_a < ell:
        raise ValueError("offset_a must clear the base word")
    m = tower.height
    op = BlockOperator(model, word)
    L_f = len(pattern)
    max_floor = tower.k_trunc // m
    cdf = op.absorb_cdf(tower.k_trunc)
    v = op.start()
    pos = 0          # steps taken = block position minus (ell - 1) ... k = steps
    mu_slice = 0.0
    for j in range(max_floor):
        target = j * m + offset_a - ell
        while pos < target:
            v = op.step(v)
            pos += 1
        pushed = _forced_push(op, model, v.copy(), pattern)
        base_steps = target + L_f
        lo_t = max(1, (j + 1) * m - base_steps)
        hi_t = tower.k_trunc - base_steps
        if hi_t < lo_t:
            continue
        mass = float(cdf[hi_t] @ pushed - (cdf[lo_t - 1] @ pushed if lo_t > 1 else 0.0))
        mu_slice += mass
    mu_slice *= tower.mu_base
    return bad_count * mu_slice, mu_slice


# ---------------------------------------------------------------------------
# staged SL(2,R) modification

@dataclass(frozen=True)
class StageRecord:
    index: int
    n: int
    eps: float
    tower: object
    exchange_len: int
    offset_a: int
    pattern: tuple
    bad_offsets: tuple
    mu_A: float
    sup_distance: float
    norm_log_max: float
    lyap_estimate: object
    lyap_floor: float
    det_residual: float
    line_field_residual: float
    cocycle_after: object


def _balanced_pattern(length, start=0):
    return tuple((j + start) % 2 for j in range(length))


class StagedCocycle:
    """Lazy SL(2,R) cocycle after one modification stage: exchange-path
    rotations on the designated slices of forced blocks, the base cocycle
    elsewhere.  Reading range is k_trunc-scale but evaluation along a long
    orbit costs one occurrence scan."""

    def __init__(self, base, tower, offset_a, k_run, n, pattern, qs_in, qs_out):
        self.base = base
        self.spec = base.spec
        self.dimension = 2
        self.det_class = "sl2"
        self.name = "sl2_stage"
        self.tower = tower
        self.offset_a = offset_a
        self.k_run = k_run
        self.n = n
        self.pattern = tuple(pattern)
        self.qs_in = qs_in
        self.qs_out = qs_out
        ell = len(tower.word)
        self.left_range = tower.k_trunc + ell + 1
        self.right_range = tower.k_trunc + ell + 1
        self._scan_key = None
        self._scan_val = None

    def _starts(self, window):
        if self._scan_key is not window:
            self._scan_key = window
            self._scan_val = self.tower.scan(window)
        return self._scan_val

    def _modified(self, window, t):
        tower = self.tower
        pk = tower.classify(window, t, starts=self._starts(window))
        if pk is None:
            return None
        p, k = pk
        if (p // tower.height) >= k // tower.height:
            return None
        off = p % tower.height
        a, n, kr = self.offset_a, self.n, self.k_run
        if not (a <= off < a + kr or a + n <= off < a + n + kr):
            return None
        blk = t - p + a                     # window coordinate of pattern start
        L = len(self.pattern)
        if not window.covers(blk, blk + L - 1):
            raise TowerError("window too small to test the forced pattern")
        if window.slice(blk, blk + L - 1) != self.pattern:
            return None
        if off < a + kr:
            return self.qs_in[off - a]
        return self.qs_out[off - a - n]

    def generator_at(self, window, t):
        mod = self._modified(window, t)
        return self.base.generator_at(window, t) if mod is None else mod

    def orbit_matrices(self, window, t0, count):
        """Generators M~(T^t x) for t in [t0, t0+count), via one occurrence
        scan of the window."""
        return [self.generator_at(window, t) for t in range(t0, t0 + count)]


def top_lyapunov_orbit(cocycle_like, model, n, samples, rng, chunk=8):
    """Top-exponent estimate for lazy cocycles: per-sample scaled vector
    iteration of (1/n) log ||M^n||, one Philox stream per chunk."""
    streams = as_streams(rng)
    l, r = cocycle_like.left_range, cocycle_like.right_range
    vals = np.empty(samples)
    done = 0
    cid = 0
    while done < samples:
        take = min(chunk, samples - done)
        gen = streams.stream(cid)
        sym = sample_two_sided(model, gen, l, n - 1 + r, batch=take)
        for b in range(take):
            win = PointWindow(-l, tuple(int(x) for x in sym[b]))
            acc = ScaledMatrix.identity(2)
            for t in range(n):
                g = cocycle_like.generator_at(win, t)
                acc = ScaledMatrix.of(g @ acc.unit, acc.log_scale)
            vals[done + b] = acc.log_norm() / n
        done += take
        cid += 1
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(samples))
    return mean, stderr


def modify_stage(prev_cocycle, lam, eps, n0, u, model, rng, K=6, delta=None,
                 k_trunc_cap=1 << 18, n_cap=8192, lyap_n=4000, lyap_samples=160,
                 line_range=6):
    """One stage of the norm-capping modification, with exact certificates.

    The previous cocycle must satisfy the locally-constant, positive-top-
    exponent, constant-line-field, identity-at-the-all-ones-point package.
    The modification acts on tower slices whose blocks carry a forced
    identity-run / balanced stretch / identity-run pattern, exchanging the
    stable and unstable lines at both ends.  Raises StageError naming the
    failing certificate (in particular when no scale satisfies the bad-set
    measure bound mu(A) >= u(n) under the size caps)."""
    streams = as_streams(rng)
    if delta is None:
        delta = lam / 14.0 * 0.98
    if not 14.0 * delta < lam:
        raise ValueError(f"need 14 delta < lambda; got delta={delta}, lambda={lam}")
    if K < 6:
        raise ValueError("need K >= 6")
    spec = prev_cocycle.spec
    if prev_cocycle.det_class != "sl2":
        raise StageError("P_lambda precondition: cocycle must be SL(2,R)")

    est_prev = lyapunov_estimate(prev_cocycle, model, lyap_n, lyap_samples,
                                 streams.spawn(1))
    if not est_prev.exponents[0] - 3 * est_prev.stderr[0] > lam:
        raise StageError("P_lambda precondition: top exponent estimate "
                         f"{est_prev.exponents[0]:.4f} - 3 se not above {lam}")
    e_u, e_s, resid = recover_line_fields(prev_cocycle, line_range)
    if resid["equivariance"] > 1e-8:
        raise StageError("P_lambda precondition: line-field equivariance "
                         f"residual {resid['equivariance']:.2e} above 1e-8")
    quiet = PointWindow(-line_range - 1, (1,) * (2 * line_range + 3))
    if np.linalg.norm(prev_cocycle.generator_at(quiet, 0) - np.eye(2)) > 1e-12:
        raise StageError("P_lambda precondition: cocycle is not the identity "
                         "on the all-ones cylinder")
    lam_plus = float(est_prev.exponents[0])

    vu = e_u[next(iter(e_u))]
    vs = e_s[next(iter(e_s))]
    k_run = exchange_k_min((vu, vs), (vu, vs), eps)
    qs_in = exchange_path((vu, vs), (vu, vs), k_run, eps)
    qs_out = exchange_path((vs, vu), (vs, vu), k_run, eps)
    base_mats = {b: prev_cocycle.generator((b,)) for b in range(spec.alphabet_size)}

    trace = []
    n = max(n0 + 1, int(np.ceil((k_run + 2) / (0.5 - delta / lam_plus))) + 1)
    while n <= n_cap:
        i_half = int(np.floor(delta * n / lam_plus))
        i_lo, i_hi = n // 2 - i_half, n // 2 + i_half
        if i_lo <= k_run:
            n = 2 * (k_run + 1) + 2 * i_half + 2
            continue
        pattern_len = n + i_hi + k_run + 1
        pattern = ((1,) * k_run + _balanced_pattern(n - k_run) +
                   (1,) * k_run + _balanced_pattern(pattern_len - n - 2 * k_run))
        bad_range = range(i_lo, i_hi + 1)
        norm_log_max = _slice_norm_log_max(base_mats, pattern, qs_in, qs_out,
                                           k_run, n, bad_range)
        if not norm_log_max < n * lam / 2.0:
            trace.append((n, None, u(n), norm_log_max))
            n *= 2
            continue
        m = K * n
        try:
            tower = build_tower(spec, model, m, 0.1, k_trunc_cap=k_trunc_cap)
        except TowerError as exc:
            raise StageError(f"tower infeasible at n={n}: {exc}") from exc
        offset_a = len(tower.word)
        mu_A, _ = bad_set_measure(model, tower, offset_a, pattern, len(bad_range))
        trace.append((n, mu_A, u(n), norm_log_max))
        if mu_A >= u(n):
            return _assemble_stage(prev_cocycle, model, streams, lam, eps, n,
                                   tower, offset_a, pattern, k_run, bad_range,
                                   mu_A, qs_in, qs_out, base_mats, lam_plus,
                                   delta, K, norm_log_max, est_prev)
        n *= 2
    lines = "; ".join(
        f"n={a}: mu(A)={'-' if b is None else format(b, '.3e')} vs u={c:.3e}"
        for a, b, c, _ in trace)
    raise StageError("bad-set measure certificate unattainable under the caps "
                     f"for this u sequence ({lines})")


def _slice_norm_log_max(base_mats, pattern, qs_in, qs_out, k_run, n, bad_range):
    """Exact max over bad offsets of log ||M~^n|| along the forced pattern."""
    worst = -np.inf
    for i in bad_range:
        acc = ScaledMatrix.identity(2)
        for step in range(n):
            off = i + step
            if n <= off < n + k_run:
                mat = qs_out[off - n]
            else:
                mat = base_mats[pattern[off]]
            acc = ScaledMatrix.of(mat @ acc.unit, acc.log_scale)
        worst = max(worst, acc.log_norm())
    return float(worst)


def _assemble_stage(prev, model, streams, lam, eps, n, tower, offset_a, pattern,
                    k_run, bad_range, mu_A, qs_in, qs_out, base_mats, lam_plus,
                    delta, K, norm_log_max, est_prev):
    staged = StagedCocycle(prev, tower, offset_a, k_run, n, pattern, qs_in, qs_out)

    sup_dist = max(float(np.linalg.norm(q - np.eye(2), ord=2))
                   for q in qs_in + qs_out)
    if sup_dist > eps:
        raise StageError(f"sup-distance certificate failed: {sup_dist} > {eps}")
    det_res = max(abs(np.linalg.det(q) - 1.0) for q in qs_in + qs_out)
    if det_res > 1e-10:
        raise StageError(f"determinant certificate failed: {det_res}")

    mean, stderr = top_lyapunov_orbit(staged, model, min(3000, 30 * n),
                                      40, streams.spawn(2))
    if not mean - 3 * stderr > lam:
        raise StageError(f"Lyapunov certificate failed: {mean:.4f} - 3 se "
                         f"({stderr:.4f}) not above {lam}")
    lyap_floor = lam_plus - (2 * lam_plus + 6 * delta) / K

    line_res = _stage_line_field_residual(base_mats, qs_in, qs_out, pattern,
                                          k_run, n)
    if line_res > 1e-6:
        raise StageError(f"line-field certificate failed: residual {line_res:.2e}")

    quiet = PointWindow(-staged.left_range,
                        (1,) * (staged.left_range + staged.right_range + 1))
    if np.linalg.norm(staged.generator_at(quiet, 0) - np.eye(2)) > 1e-14:
        raise StageError("identity-region certificate failed")

    return StageRecord(index=1, n=n, eps=eps, tower=tower, exchange_len=k_run,
                       offset_a=offset_a, pattern=tuple(pattern),
                       bad_offsets=tuple(offset_a + i for i in bad_range),
                       mu_A=mu_A, sup_distance=sup_dist,
                       norm_log_max=norm_log_max,
                       lyap_estimate=(mean, stderr), lyap_floor=lyap_floor,
                       det_residual=det_res, line_field_residual=line_res,
                       cocycle_after=staged)


def _stage_line_field_residual(base_mats, qs_in, qs_out, pattern, k_run, n):
    """The modified unstable line must return to itself across a full forced
    block: e1 rotates into the e2 line, rides the stretch, and rotates back."""
    vu = np.array([1.0, 0.0])
    cur = vu.copy()
    for off in range(n + k_run):
        if off < k_run:
            mat = qs_in[off]
        elif n <= off < n + k_run:
            mat = qs_out[off - n]
        else:
            mat = base_mats[pattern[off]]
        cur = mat @ cur
        cur = cur / np.linalg.norm(cur)
    return float(min(np.linalg.norm(cur - vu), np.linalg.norm(cur + vu)))
