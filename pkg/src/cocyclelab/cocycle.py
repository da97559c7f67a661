"""Finite-range matrix cocycles: overflow-safe iteration, Lyapunov spectra,
finite-time singular flags, and projective averages.

All products accumulate as (unit-norm matrix, log scale) pairs so horizons
of 10^4 steps with expansion 2 per step never overflow.
"""

from dataclasses import dataclass, field
from math import comb

import numpy as np

from cocyclelab.gibbs import sample_two_sided
from cocyclelab.linalg import MAX_DIM, Subspace, exterior_power
from cocyclelab.rng import as_streams
from cocyclelab.subshift import SubshiftSpec, enumerate_words, window_from_array


class WindowTooSmall(ValueError):
    def __init__(self, needed_lo, needed_hi, window):
        self.needed = (needed_lo, needed_hi)
        super().__init__(
            f"window [{window.start_index}, {window.end_index}] does not cover "
            f"required coordinates [{needed_lo}, {needed_hi}]")


@dataclass(frozen=True)
class ScaledMatrix:
    """Represents e^{log_scale} * unit with ||unit|| kept in [1/2, 2]."""

    unit: np.ndarray
    log_scale: float

    @staticmethod
    def of(A, log_scale=0.0):
        A = np.asarray(A, dtype=float)
        nrm = np.linalg.norm(A, ord=2)
        if nrm == 0 or not np.isfinite(nrm):
            raise ValueError("cannot scale a zero or non-finite matrix")
        return ScaledMatrix(A / nrm, float(log_scale) + float(np.log(nrm)))

    @staticmethod
    def identity(d):
        return ScaledMatrix(np.eye(d), 0.0)

    def matmul(self, other):
        """self @ other in the scaled representation."""
        return ScaledMatrix.of(self.unit @ other.unit,
                               self.log_scale + other.log_scale)

    def inv(self):
        return ScaledMatrix.of(np.linalg.inv(self.unit), -self.log_scale)

    def dense(self):
        return np.exp(self.log_scale) * self.unit

    def log_norm(self):
        return self.log_scale + float(np.log(np.linalg.norm(self.unit, ord=2)))

    def log_singular_values(self):
        s = np.linalg.svd(self.unit, compute_uv=False)
        return self.log_scale + np.log(s)

    def apply(self, vectors):
        """Image of column vectors, as (array, log_scale)."""
        return self.unit @ np.asarray(vectors, dtype=float), self.log_scale


class CocycleTable:
    """Locally constant cocycle: M(x) reads coordinates x_{-l} .. x_{r}.

    The generator is a function from (l+r+1)-windows to invertible d x d
    matrices; tabulated cocycles wrap a dict.  det_class "sl2" asserts unit
    determinant on every generator.
    """

    def __init__(self, spec, dimension, left_range, right_range, generator,
                 det_class="general", name="table", check_words=None):
        if dimension > MAX_DIM:
            raise ValueError(f"dimension {dimension} exceeds cap {MAX_DIM}")
        if left_range < 0 or right_range < 0:
            raise ValueError("ranges must be nonnegative")
        self.spec = spec
        self.dimension = dimension
        self.left_range = left_range
        self.right_range = right_range
        self._generator = generator
        self.det_class = det_class
        self.name = name
        words = check_words
        if words is None:
            try:
                words = enumerate_words(spec, left_range + right_range + 1, cap=4096)
            except Exception:
                words = None
        if words is not None:
            for w in words:
                m = self.generator(w)
                self._check_generator(m, w)

    def _check_generator(self, m, w):
        m = np.asarray(m, dtype=float)
        if m.shape != (self.dimension, self.dimension):
            raise ValueError(f"generator for {w} has wrong shape")
        smin = np.linalg.svd(m, compute_uv=False)[-1]
        if smin <= 1e-12:
            raise ValueError(f"generator for {w} is not safely invertible")
        if self.det_class == "sl2" and abs(np.linalg.det(m) - 1.0) > 1e-10:
            raise ValueError(f"generator for {w} is not in SL(2,R)")

    def generator(self, word):
        """Matrix attached to the reading window (length l+r+1)."""
        return np.asarray(self._generator(tuple(int(a) for a in word)), dtype=float)

    def generator_at(self, window, t):
        """M(T^t x) read off a PointWindow."""
        lo, hi = t - self.left_range, t + self.right_range
        if not window.covers(lo, hi):
            raise WindowTooSmall(lo, hi, window)
        return self.generator(window.slice(lo, hi))

    def required_range(self, n):
        """Coordinates read by M^n: [-l, n-1+r] for n>0, [n-l, r] for n<0."""
        if n >= 0:
            return (-self.left_range, max(n - 1, 0) + self.right_range)
        return (n - self.left_range, self.right_range)


def product(cocycle, window, n):
    """M^n(x) as a ScaledMatrix; n may be negative (inverse of the pullback
    forward product, M^{-n}(x) = M^n(T^{-n} x)^{-1})."""
    d = cocycle.dimension
    lo, hi = cocycle.required_range(n)
    if not window.covers(lo, hi):
        raise WindowTooSmall(lo, hi, window)
    if n == 0:
        return ScaledMatrix.identity(d)
    if n < 0:
        fwd = ScaledMatrix.identity(d)
        for j in range(-n):
            fwd = ScaledMatrix.of(cocycle.generator_at(window, n + j) @ fwd.unit,
                                  fwd.log_scale)
        return fwd.inv()
    acc = ScaledMatrix.identity(d)
    for j in range(n):
        acc = ScaledMatrix.of(cocycle.generator_at(window, j) @ acc.unit, acc.log_scale)
    return acc


# ---------------------------------------------------------------------------
# builtin constructors

def identity_cocycle(spec, dimension=2):
    eye = np.eye(dimension)
    return CocycleTable(spec, dimension, 0, 0, lambda w: eye, name="identity")


def constant_cocycle(spec, matrix, det_class="general"):
    m = np.asarray(matrix, dtype=float)
    return CocycleTable(spec, m.shape[0], 0, 0, lambda w: m,
                        det_class=det_class, name="constant")


def diag_symbol_cocycle(spec, diagonals, det_class="general"):
    """Diagonal matrix chosen by the symbol x_0; diagonals[a] lists the
    diagonal entries for symbol a."""
    mats = {(a,): np.diag(np.asarray(dg, dtype=float))
            for a, dg in enumerate(diagonals)}
    d = len(diagonals[0])
    return CocycleTable(spec, d, 0, 0, lambda w: mats[w],
                        det_class=det_class, name="diag_symbol")


def m0_cocycle(spec=None):
    """diag(2, 1/2) on symbol 0, identity on symbol 1 (SL(2,R))."""
    spec = spec or SubshiftSpec.full_shift(2)
    mats = {(0,): np.diag([2.0, 0.5]), (1,): np.eye(2)}
    return CocycleTable(spec, 2, 0, 0, lambda w: mats[w], det_class="sl2", name="m0")


REMARK_DIAG = np.diag([3.0, 2.0, 1.0])


def remark39_cocycle(spec=None, presentation="constant", terms=40):
    """The constant diag(3,2,1) cocycle of the two-u-state example.

    presentation "constant": the matrix itself (range 0), to be paired with
    the closed-form holonomy providers in the holonomy module.
    presentation "past": the cohomologous table reading x_{-terms} .. x_0
    whose truncated-limit stable holonomy reproduces the closed-form series
    truncated at `terms` terms.
    """
    spec = spec or SubshiftSpec.full_shift(2)
    if presentation == "constant":
        return CocycleTable(spec, 3, 0, 0, lambda w: REMARK_DIAG, name="remark39")
    if presentation != "past":
        raise ValueError("presentation must be 'constant' or 'past'")
    L = int(terms)

    def gen(word):
        # word covers x_{-L} .. x_0
        x_mL, x_0 = word[0], word[-1]
        m = REMARK_DIAG.copy()
        m[2, 0] = x_0 - (3.0 ** -L) * x_mL
        m[2, 1] = x_0 - (2.0 ** -L) * x_mL
        return m

    return CocycleTable(spec, 3, L, 0, gen, name="remark39_past",
                        check_words=[(0,) * (L + 1), (1,) * (L + 1)])


def upper_block_cocycle(spec, rng, spread=0.5):
    """Random block-upper-triangular 3x3 cocycle with a 1x1 and a 2x2 block,
    one generator per symbol."""
    rng = np.random.default_rng(rng) if not hasattr(rng, "normal") else rng
    mats = {}
    for a in range(spec.alphabet_size):
        top = np.exp(rng.normal(0.8, 0.2))
        block = np.eye(2) + spread * rng.normal(size=(2, 2))
        while abs(np.linalg.det(block)) < 0.2:
            block = np.eye(2) + spread * rng.normal(size=(2, 2))
        strip = spread * rng.normal(size=(1, 2))
        m = np.zeros((3, 3))
        m[0, 0] = top
        m[0, 1:] = strip
        m[1:, 1:] = block
        mats[(a,)] = m
    return CocycleTable(spec, 3, 0, 0, lambda w: mats[w], name="upper_block")


def random_cocycle(spec, dimension, seed, window=(0, 0), scale=0.6):
    """Random invertible generators, one per reading window."""
    l, r = window
    rng = np.random.default_rng(seed)
    mats = {}
    for w in enumerate_words(spec, l + r + 1):
        m = np.eye(dimension) + scale * rng.normal(size=(dimension, dimension))
        while abs(np.linalg.det(m)) < 0.1:
            m = np.eye(dimension) + scale * rng.normal(size=(dimension, dimension))
        mats[tuple(w)] = m
    return CocycleTable(spec, dimension, l, r, lambda w: mats[w], name="random")


def table_cocycle(spec, dimension, left_range, right_range, table, det_class="general"):
    mats = {tuple(int(a) for a in w): np.asarray(m, dtype=float)
            for w, m in table.items()}
    return CocycleTable(spec, dimension, left_range, right_range,
                        lambda w: mats[w], det_class=det_class, name="table")


def cocycle_from_config(spec, obj):
    kind = obj["kind"]
    if kind == "identity":
        return identity_cocycle(spec, int(obj.get("dimension", 2)))
    if kind == "constant":
        return constant_cocycle(spec, obj["matrix"], obj.get("det_class", "general"))
    if kind == "diag_symbol":
        return diag_symbol_cocycle(spec, obj["diagonals"], obj.get("det_class", "general"))
    if kind == "m0":
        return m0_cocycle(spec)
    if kind == "remark39":
        return remark39_cocycle(spec, obj.get("presentation", "constant"),
                                int(obj.get("terms", 40)))
    if kind == "upper_block":
        return upper_block_cocycle(spec, int(obj.get("seed", 0)))
    if kind == "random":
        return random_cocycle(spec, int(obj.get("dimension", 2)), int(obj.get("seed", 0)),
                              tuple(obj.get("window", (0, 0))))
    if kind == "table":
        table = {tuple(int(c) for c in w): np.array(m, dtype=float).reshape(
                 int(obj["dimension"]), int(obj["dimension"]))
                 for w, m in obj["table"].items()}
        return table_cocycle(spec, int(obj["dimension"]), int(obj.get("left_range", 0)),
                             int(obj.get("right_range", 0)), table,
                             obj.get("det_class", "general"))
    raise ValueError(f"unknown cocycle kind {kind!r}")


# ---------------------------------------------------------------------------
# Lyapunov estimation

@dataclass(frozen=True)
class LyapunovEstimate:
    exponents: np.ndarray
    partial_sums: np.ndarray
    stderr: np.ndarray
    n: int
    samples: int

    def min_gap(self):
        ex = self.exponents
        gaps = [abs(ex[i] - ex[j]) for i in range(len(ex)) for j in range(i + 1, len(ex))
                if abs(ex[i] - ex[j]) > 4 * (self.stderr[i] + self.stderr[j])]
        return min(gaps) if gaps else 0.0


def _exterior_cache(cocycle, words):
    d = cocycle.dimension
    cache = {}
    for w in words:
        g = cocycle.generator(w)
        cache[w] = [exterior_power(g, i) for i in range(1, d + 1)]
    return cache


def _batched_log_exterior_norms(cocycle, symbol_windows, n):
    """log ||Lambda^i M^n|| for each sample row and each i, via batched
    scaled products.  symbol_windows has shape (batch, l + n + r)."""
    d = cocycle.dimension
    batch = symbol_windows.shape[0]
    l, r = cocycle.left_range, cocycle.right_range
    width = l + r + 1
    words = enumerate_words(cocycle.spec, width)
    word_index = {w: k for k, w in enumerate(words)}
    cache = _exterior_cache(cocycle, words)
    dims = [comb(d, i) for i in range(1, d + 1)]
    gens = [np.stack([cache[w][i] for w in words]) for i in range(d)]

    # classify each step's reading window
    codes = np.empty((batch, n), dtype=np.int64)
    for j in range(n):
        block = symbol_windows[:, j:j + width]
        codes[:, j] = [word_index[tuple(row)] for row in block]

    out = np.empty((batch, d))
    for i in range(d):
        k = dims[i]
        acc = np.broadcast_to(np.eye(k), (batch, k, k)).copy()
        logs = np.zeros(batch)
        for j in range(n):
            acc = np.matmul(gens[i][codes[:, j]], acc)
            nrm = np.linalg.norm(acc, axis=(1, 2))
            acc /= nrm[:, None, None]
            logs += np.log(nrm)
        # convert Frobenius normalization to operator norm at the end
        op = np.linalg.norm(acc, ord=2, axis=(1, 2))
        out[:, i] = logs + np.log(op)
    return out


CHUNK = 64


def lyapunov_estimate(cocycle, model, n, samples, rng):
    """Monte-Carlo Lyapunov spectrum from Gibbs-sampled windows.

    partial_sums[i-1] is the sample mean of (1/n) log ||Lambda^i M^n(x)||;
    exponents follow by differencing, standard errors from the sample
    variance.  Sampling is chunked with one Philox stream per chunk so the
    result is independent of worker layout.
    """
    if n < 1 or samples < 2:
        raise ValueError("need n >= 1 and samples >= 2")
    streams = as_streams(rng)
    d = cocycle.dimension
    l, r = cocycle.left_range, cocycle.right_range
    sums = np.zeros((samples, d))
    done = 0
    chunk_id = 0
    while done < samples:
        take = min(CHUNK, samples - done)
        gen = streams.stream(chunk_id)
        sym = sample_two_sided(model, gen, l, n - 1 + r, batch=take)
        sums[done:done + take] = _batched_log_exterior_norms(cocycle, sym, n) / n
        done += take
        chunk_id += 1
    mean = sums.mean(axis=0)
    stderr = sums.std(axis=0, ddof=1) / np.sqrt(samples)
    exponents = np.diff(np.concatenate([[0.0], mean]))
    err = np.empty(d)
    err[0] = stderr[0]
    err[1:] = stderr[1:] + stderr[:-1]
    return LyapunovEstimate(exponents=exponents, partial_sums=mean, stderr=err,
                            n=n, samples=samples)


# ---------------------------------------------------------------------------
# finite-time singular flags

@dataclass(frozen=True)
class FlagData:
    n: int
    block_exponents: np.ndarray          # one value per coordinate, nonincreasing
    blocks: tuple                        # ((index tuple, Subspace), ...)
    grouped_by: float

    def flag_geq(self, block_start):
        """Span of blocks with block index >= block_start (slower ones)."""
        cols = [blk.basis for (idx, blk) in self.blocks if idx[0] + 1 >= block_start]
        return Subspace(np.hstack(cols)) if cols else None

    def flag_lt(self, block_start):
        cols = [blk.basis for (idx, blk) in self.blocks if idx[0] + 1 < block_start]
        return Subspace(np.hstack(cols)) if cols else None

    def flag_leq(self, block_end):
        cols = [blk.basis for (idx, blk) in self.blocks if idx[-1] + 1 <= block_end]
        return Subspace(np.hstack(cols)) if cols else None


def singular_flags(cocycle, window, n, gap_tol):
    """Right-singular blocks of M^n(x), grouped by exponent gaps below
    gap_tol; exponents are (1/n) log s_i sorted nonincreasing."""
    if n == 0:
        raise ValueError("n must be nonzero")
    mat = product(cocycle, window, n)
    u, s, vt = np.linalg.svd(mat.unit)
    logs = mat.log_scale + np.log(s)
    lam = logs / n
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    vecs = vt.T[:, order]
    blocks = []
    start = 0
    d = cocycle.dimension
    for i in range(1, d + 1):
        if i == d or lam[i - 1] - lam[i] >= gap_tol:
            idx = tuple(range(start, i))
            blocks.append((idx, Subspace.from_spanning(vecs[:, start:i])))
            start = i
    return FlagData(n=n, block_exponents=lam, blocks=tuple(blocks), grouped_by=gap_tol)


def projective_average(cocycle, model, v0, n, rng):
    """(1/n) sum of log(||M(T^j x) v_j|| / ||v_j||) along one sampled orbit,
    renormalizing v after each step (the projective-observable average)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    streams = as_streams(rng)
    gen = streams.stream(0)
    l, r = cocycle.left_range, cocycle.right_range
    sym = sample_two_sided(model, gen, l, n - 1 + r, batch=1)[0]
    w = window_from_array(-l, sym)
    v = np.asarray(v0, dtype=float)
    v = v / np.linalg.norm(v)
    total = 0.0
    for j in range(n):
        v = cocycle.generator_at(w, j) @ v
        nrm = np.linalg.norm(v)
        total += np.log(nrm)
        v = v / nrm
    return total / n
