"""Exact Rokhlin towers from first-return decompositions.

Two representations: explicit CylinderSet towers for desk-size parameters,
and Kakutani towers whose base is the union of first-return blocks of a
base word, cut into floors of the requested height.  The Kakutani base is
a finite union of cylinders that is far too large to list, so measures and
memberships are computed exactly through the first-return law (a small
Markov/KMP product automaton) instead of word lists.
"""

from dataclasses import dataclass

import numpy as np

from cocyclelab.gibbs import cylinder_measure
from cocyclelab.subshift import (CylinderSet, SizeCapExceeded, cylinder_intersection,
                                 enumerate_words, size_cap)


class TowerError(RuntimeError):
    pass


def kmp_failure(word):
    """Prefix function: fail[m] = length of the longest proper border of
    word[:m]."""
    ell = len(word)
    fail = [0] * (ell + 1)
    k = 0
    for i in range(1, ell):
        while k and word[i] != word[k]:
            k = fail[k]
        if word[i] == word[k]:
            k += 1
        fail[i + 1] = k
    return fail


def kmp_advance(word, fail, m, symbol):
    while m and word[m] != symbol:
        m = fail[m]
    if word[m] == symbol:
        m += 1
    return m


def kmp_transition_table(word, alphabet):
    ell = len(word)
    fail = kmp_failure(word)
    table = np.empty((ell + 1, alphabet), dtype=np.int64)
    for m in range(ell + 1):
        for b in range(alphabet):
            mm = m if m < ell else fail[ell]
            table[m, b] = kmp_advance(word, fail, mm, b)
    return table


def first_return_law(model, word, k_max):
    """Exact conditional first-return-time law of the cylinder [word].

    Returns rho with rho[k] = mu(return time exactly k | in [word]) for
    k = 1..k_max, plus the surviving (censored) mass.  Requires a
    state_len-1 Gibbs model (symbol Markov chain).
    """
    if model.state_len != 1:
        raise TowerError("first-return machinery needs a range <= 2 potential")
    word = tuple(int(a) for a in word)
    ell = len(word)
    A = model.spec.alphabet_size
    kern = model.kernel
    fail = kmp_failure(word)
    trans = kmp_transition_table(word, A)

    # joint state (current symbol a, kmp match m); start conditioned on the
    # word occupying positions 0..ell-1, cursor at position ell-1
    dist = np.zeros((A, ell + 1))
    dist[word[-1], fail[ell]] = 1.0
    rho = np.zeros(k_max + 1)
    for k in range(1, k_max + 1):
        nxt = np.zeros_like(dist)
        for b in range(A):
            contrib = kern[:, b] @ dist          # vector over m
            np.add.at(nxt[b], trans[:, b], contrib)
        rho[k] = nxt[:, ell].sum()
        nxt[:, ell] = 0.0
        dist = nxt
    return rho, float(dist.sum())


@dataclass(frozen=True)
class KakutaniTower:
    """Tower over the first-return decomposition of a base cylinder.

    R = union over return blocks of the floors T^{j m} B_k, j < floor(k/m),
    for block lengths k <= k_trunc; taller-than-truncation blocks stay in
    the residual.  All measures are exact sums over the return law.
    """

    model: object
    word: tuple
    height: int
    k_trunc: int
    rho: np.ndarray       # conditional return law, index 1..k_trunc
    mu_base: float
    mu_R: float
    coverage: float
    residual_mass: float

    def occurrence_starts(self, symbols):
        """Sorted positions (array offsets) where the base word occurs."""
        arr = np.asarray(symbols)
        ell = len(self.word)
        if len(arr) < ell:
            return np.array([], dtype=np.int64)
        hits = np.ones(len(arr) - ell + 1, dtype=bool)
        for j, a in enumerate(self.word):
            hits &= arr[j:len(arr) - ell + 1 + j] == a
        return np.nonzero(hits)[0]

    def scan(self, window):
        """Occurrence starts of the base word, in window coordinates."""
        return self.occurrence_starts(window.array()) + window.start_index

    def classify(self, window, t, starts=None):
        """(p, k) for the return block containing T^t x, or None when the
        point is residual / truncated out; raises when the window cannot
        decide.  Pass a cached `starts` from scan() when classifying many
        positions of one window."""
        ell = len(self.word)
        lookback = self.k_trunc + ell
        if not window.covers(t - lookback, t + lookback):
            raise TowerError(f"window too small to classify position {t}")
        if starts is None:
            starts = self.scan(window)
        pos = int(np.searchsorted(starts, t, side="right"))
        if pos == 0:
            return None
        q = int(starts[pos - 1])
        if t - q >= self.k_trunc:
            return None
        if pos >= len(starts):
            return None
        k = int(starts[pos]) - q
        if k > self.k_trunc:
            return None
        return t - q, k

    def in_floor_set(self, window, t, offsets, starts=None):
        """Is T^t x in the union of floor slices T^o R for o in offsets?
        offsets are tower positions counted from the floor base."""
        pk = self.classify(window, t, starts=starts)
        if pk is None:
            return False
        p, k = pk
        floors = k // self.height
        off = p % self.height
        return (p // self.height) < floors and off in offsets

    def floor_union_measure(self, offsets):
        """Exact measure of union of T^o R over distinct offsets o in
        [0, height)."""
        ks = np.arange(1, self.k_trunc + 1)
        floors = ks // self.height
        return float(len(set(offsets)) * (floors * self.rho[1:] * self.mu_base).sum())


def choose_base_word(spec, model, max_measure, budget):
    """Lexicographically first admissible word with measure <= max_measure,
    scanning lengths up to `budget`; prefers constant-symbol words so the
    word has trivial overlap structure where possible."""
    for n in range(1, budget + 1):
        const = tuple([0] * n)
        if spec.word_admissible(const) and cylinder_measure(model, const) <= max_measure:
            return const
        try:
            words = enumerate_words(spec, n, cap=4096)
        except SizeCapExceeded:
            continue
        for w in words:
            if cylinder_measure(model, w) <= max_measure:
                return tuple(w)
    raise TowerError(f"no base word within budget {budget} achieves measure "
                     f"<= {max_measure}")


def build_tower(spec, model, m, delta, base_word_budget=32, k_trunc_cap=1 << 21):
    """Kakutani tower of height m with coverage >= 1 - delta.

    Base cylinder [w] with mu <= delta/(2m); blocks decomposed by first
    return up to a truncation with exact tail mass <= delta/2.
    """
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if m < 1:
        raise ValueError("m must be >= 1")
    if m == 1:
        rho = np.zeros(2)
        rho[1] = 1.0
        return KakutaniTower(model=model, word=(), height=1, k_trunc=1, rho=rho,
                             mu_base=1.0, mu_R=1.0, coverage=1.0, residual_mass=0.0)
    word = choose_base_word(spec, model, delta / (2 * m), base_word_budget)
    mu_base = cylinder_measure(model, word)
    # grow the truncation until the k-weighted tail is below delta/2
    k_trunc = 8 * m
    while True:
        rho, _ = first_return_law(model, word, k_trunc)
        ks = np.arange(k_trunc + 1)
        kac_mass = float((ks * rho).sum() * mu_base)
        tail = 1.0 - kac_mass
        if tail <= delta / 2:
            break
        if k_trunc >= k_trunc_cap:
            raise TowerError("truncation tail too heavy under the size cap")
        k_trunc = min(2 * k_trunc, k_trunc_cap)
    floors = ks // m
    mu_R = float((floors * rho * mu_base).sum())
    coverage = m * mu_R
    if coverage < 1 - delta:
        raise TowerError(f"coverage {coverage:.6f} below 1 - delta")
    return KakutaniTower(model=model, word=tuple(word), height=m, k_trunc=k_trunc,
                         rho=rho, mu_base=mu_base, mu_R=mu_R, coverage=coverage,
                         residual_mass=1.0 - coverage)


def brute_force_return_law(model, word, k_max, cap=None):
    """Independent first-return law by direct enumeration of continuation
    words; exact but exponential in k_max."""
    word = tuple(word)
    ell = len(word)
    spec = model.spec
    mu_base = cylinder_measure(model, word)
    rho = np.zeros(k_max + 1)
    frontier = {word: cylinder_measure(model, word)}
    cap = size_cap() if cap is None else cap
    for k in range(1, k_max + 1):
        nxt = {}
        for w, mass in frontier.items():
            for b in range(spec.alphabet_size):
                if not spec.transitions[w[-1]][b]:
                    continue
                w2 = w + (b,)
                mass2 = mass * model.kernel[model.state_index[(w[-1],)],
                                            model.state_index[(b,)]]
                if w2[-ell:] == word:
                    rho[k] += mass2
                else:
                    nxt[w2] = nxt.get(w2, 0.0) + mass2
        if len(nxt) > cap:
            raise SizeCapExceeded("brute-force return enumeration exceeds cap")
        frontier = nxt
    return rho / mu_base


def verify_tower(spec, model, tower, brute_k=None, samples=200, rng=None):
    """Independent verification of a tower; never trusts stored metadata.

    Kakutani towers: re-derive the return law (brute force up to brute_k),
    check the Kac mass identity, recompute coverage from the law, and check
    floor-disjointness through the block classification on sampled windows.
    Explicit towers: literal cylinder set algebra.
    """
    if isinstance(tower, ExplicitTower):
        return verify_explicit_tower(spec, model, tower)
    ell = max(len(tower.word), 1)
    if brute_k is None:
        brute_k = max(2, min(14, 2 * ell) - ell)
    if tower.height == 1:
        return {"disjoint": True, "coverage": 1.0}
    law = brute_force_return_law(model, tower.word, brute_k)
    if np.abs(law - tower.rho[:brute_k + 1]).max() > 1e-12:
        return {"disjoint": False, "coverage": 0.0,
                "error": "return law mismatch against brute force"}
    mu_base = cylinder_measure(model, tower.word)
    ks = np.arange(tower.k_trunc + 1)
    kac_mass = float((ks * tower.rho).sum() * mu_base)
    if not kac_mass <= 1.0 + 1e-12:
        return {"disjoint": False, "coverage": 0.0, "error": "Kac identity violated"}
    coverage = float(tower.height * ((ks // tower.height) * tower.rho).sum() * mu_base)
    disjoint = True
    if rng is not None:
        from cocyclelab.gibbs import sample_two_sided
        width = tower.k_trunc + ell
        for s in range(samples):
            sym = sample_two_sided(model, rng, 2 * width, 2 * width, batch=1)[0]
            from cocyclelab.subshift import window_from_array
            win = window_from_array(-2 * width, sym)
            pk = tower.classify(win, 0)
            if pk is None:
                continue
            p, k = pk
            # membership in T^i R is the unique residue class p mod height
            hits = [i for i in range(tower.height)
                    if (p - i) >= 0 and (p - i) % tower.height == 0
                    and (p - i) // tower.height < k // tower.height]
            if len(hits) > 1:
                disjoint = False
    return {"disjoint": disjoint, "coverage": coverage,
            "residual": 1.0 - coverage, "kac_mass": kac_mass}


# ---------------------------------------------------------------------------
# explicit towers (desk-size; literal cylinder algebra)

@dataclass(frozen=True)
class ExplicitTower:
    base: CylinderSet
    height: int
    coverage: float
    residual: CylinderSet


def explicit_tower(spec, model, base, height):
    mu = sum(cylinder_measure(model, w) for w in base.words)
    lo = base.base_index - (height - 1)
    length = base.length + height - 1
    all_words = frozenset(enumerate_words(spec, length))
    covered = set()
    for i in range(height):
        covered |= base.shift(i).refine(spec, lo, length).words
    residual = CylinderSet(lo, length, frozenset(all_words) - covered)
    return ExplicitTower(base=base, height=height, coverage=float(height * mu),
                         residual=residual)


def verify_explicit_tower(spec, model, tower):
    """Literal set algebra on word lists at a common refinement."""
    base = tower.base
    shifts = [base.shift(i) for i in range(tower.height)]
    lo = min(s.base_index for s in shifts)
    hi = max(s.base_index + s.length - 1 for s in shifts)
    refined = [s.refine(spec, lo, hi - lo + 1) for s in shifts]
    disjoint = True
    for i in range(len(refined)):
        for j in range(i + 1, len(refined)):
            if refined[i].words & refined[j].words:
                disjoint = False
    union = set()
    for rset in refined:
        union |= rset.words
    coverage = sum(cylinder_measure(model, w) for w in sorted(union))
    return {"disjoint": disjoint, "coverage": float(coverage)}
