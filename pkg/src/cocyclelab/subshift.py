"""Bilateral subshifts of finite type: alphabets, words, windows, cylinders.

Points are always represented by finite symbol windows; every operation
states the coordinate range it reads.  Word order is lexicographic
everywhere so outputs are deterministic.
"""

import os
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SIZE_CAP = 2**24


def size_cap():
    return int(os.environ.get("COCYCLE_LAB_SIZE_CAP", DEFAULT_SIZE_CAP))


class SizeCapExceeded(RuntimeError):
    pass


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class SubshiftSpec:
    """Alphabet size and boolean transition table (a -> b allowed)."""

    alphabet_size: int
    transitions: tuple  # tuple of tuples of 0/1

    def __post_init__(self):
        A = self.alphabet_size
        if A < 1:
            raise InvalidSpec("alphabet_size must be >= 1")
        t = tuple(tuple(int(bool(v)) for v in row) for row in self.transitions)
        if len(t) != A or any(len(row) != A for row in t):
            raise InvalidSpec("transitions must be an A x A table")
        object.__setattr__(self, "transitions", t)
        m = self.matrix()
        if (m.sum(axis=1) == 0).any():
            raise InvalidSpec("every symbol needs at least one allowed successor")
        if (m.sum(axis=0) == 0).any():
            raise InvalidSpec("every symbol needs at least one allowed predecessor")

    def matrix(self):
        return np.array(self.transitions, dtype=np.int64)

    def allowed(self, a, b):
        return bool(self.transitions[a][b])

    def word_admissible(self, word):
        return all(self.transitions[a][b] for a, b in zip(word, word[1:]))

    @staticmethod
    def full_shift(A=2):
        return SubshiftSpec(A, tuple(tuple(1 for _ in range(A)) for _ in range(A)))

    @staticmethod
    def golden_mean():
        return SubshiftSpec(2, ((1, 1), (1, 0)))

    def to_config(self):
        return {"alphabet_size": self.alphabet_size,
                "transitions": [list(r) for r in self.transitions]}

    @staticmethod
    def from_config(obj):
        return SubshiftSpec(int(obj["alphabet_size"]),
                            tuple(tuple(row) for row in obj["transitions"]))


def is_transitive(spec):
    """True iff the transition table is irreducible."""
    A = spec.alphabet_size
    m = spec.matrix() > 0
    reach = m | np.eye(A, dtype=bool)
    for _ in range(A):
        reach = reach | (reach @ reach)
    return bool(reach.all() and (reach.T).all())


def count_words(spec, n):
    """Number of admissible length-n words (transfer-matrix count)."""
    if n == 0:
        return 1
    m = spec.matrix()
    return int(np.linalg.matrix_power(m, n - 1).sum())


def enumerate_words(spec, n, cap=None):
    """All admissible length-n words in lexicographic order.

    Refuses (SizeCapExceeded) when the transfer-matrix count exceeds the cap.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cap = size_cap() if cap is None else cap
    total = count_words(spec, n)
    if total > cap:
        raise SizeCapExceeded(f"{total} admissible words of length {n} exceeds cap {cap}")
    A = spec.alphabet_size
    words = [(a,) for a in range(A)]
    for _ in range(n - 1):
        words = [w + (b,) for w in words for b in range(A) if spec.transitions[w[-1]][b]]
    return words


def periodic_words(spec, k):
    """Admissible length-k words that are also admissible cyclically."""
    return [w for w in enumerate_words(spec, k) if spec.transitions[w[-1]][w[0]]]


@dataclass(frozen=True)
class PointWindow:
    """Finite symbol window standing in for a point; occupies indices
    start_index .. start_index + len(symbols) - 1."""

    start_index: int
    symbols: tuple

    def __post_init__(self):
        if len(self.symbols) == 0:
            raise ValueError("window must be nonempty")
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))

    @property
    def end_index(self):
        return self.start_index + len(self.symbols) - 1

    def covers(self, a, b):
        """Does the window include coordinates a..b (inclusive)?"""
        return self.start_index <= a and b <= self.end_index

    def get(self, i):
        if not self.covers(i, i):
            raise IndexError(f"coordinate {i} outside window "
                             f"[{self.start_index}, {self.end_index}]")
        return self.symbols[i - self.start_index]

    def slice(self, a, b):
        """Symbols at coordinates a..b inclusive."""
        if not self.covers(a, b):
            raise IndexError(f"coordinates {a}..{b} outside window")
        o = self.start_index
        return self.symbols[a - o:b - o + 1]

    def admissible(self, spec):
        return spec.word_admissible(self.symbols)

    def array(self):
        return np.array(self.symbols, dtype=np.int64)


def window_from_array(start_index, arr):
    return PointWindow(start_index, tuple(int(v) for v in arr))


def shift_window(w, t):
    """Realize T^t on windows: new coordinate 0 is old coordinate t."""
    return PointWindow(w.start_index - t, w.symbols)


@dataclass(frozen=True)
class CylinderSet:
    """Union of equal-length cylinders based at a common index."""

    base_index: int
    length: int
    words: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        ws = frozenset(tuple(int(s) for s in w) for w in self.words)
        if any(len(w) != self.length for w in ws):
            raise ValueError("all words must have the stated length")
        object.__setattr__(self, "words", ws)

    def validate(self, spec):
        for w in self.words:
            if not spec.word_admissible(w):
                raise ValueError(f"inadmissible word {w}")

    def is_empty(self):
        return not self.words

    def contains(self, window):
        a, b = self.base_index, self.base_index + self.length - 1
        return window.covers(a, b) and window.slice(a, b) in self.words

    def shift(self, t):
        """Image under T^t (cylinder at base_index - t)."""
        return CylinderSet(self.base_index - t, self.length, self.words)

    def refine(self, spec, base_index, length, cap=None):
        """Re-express over cylinders [base_index .. base_index+length-1].

        The target range must contain the current one.
        """
        lo, hi = base_index, base_index + length - 1
        if not (lo <= self.base_index and self.base_index + self.length - 1 <= hi):
            raise ValueError("refinement range must contain the set's range")
        cap = size_cap() if cap is None else cap
        left = self.base_index - lo
        right = hi - (self.base_index + self.length - 1)
        out = set()
        for w in sorted(self.words):
            exts = [w]
            for _ in range(left):
                exts = [(a,) + e for e in exts for a in range(spec.alphabet_size)
                        if spec.transitions[a][e[0]]]
                if len(exts) > cap:
                    raise SizeCapExceeded("refinement exceeds size cap")
            for _ in range(right):
                exts = [e + (b,) for e in exts for b in range(spec.alphabet_size)
                        if spec.transitions[e[-1]][b]]
                if len(exts) > cap:
                    raise SizeCapExceeded("refinement exceeds size cap")
            out.update(exts)
            if len(out) > cap:
                raise SizeCapExceeded("refinement exceeds size cap")
        return CylinderSet(lo, length, frozenset(out))


def common_refinement(spec, sets, cap=None):
    """Refine several CylinderSets to one common base/length."""
    lo = min(s.base_index for s in sets)
    hi = max(s.base_index + s.length - 1 for s in sets)
    return [s.refine(spec, lo, hi - lo + 1, cap=cap) for s in sets]


def cylinder_union(spec, a, b, cap=None):
    ra, rb = common_refinement(spec, [a, b], cap=cap)
    return CylinderSet(ra.base_index, ra.length, ra.words | rb.words)


def cylinder_intersection(spec, a, b, cap=None):
    ra, rb = common_refinement(spec, [a, b], cap=cap)
    return CylinderSet(ra.base_index, ra.length, ra.words & rb.words)


def cylinder_complement(spec, a, cap=None):
    all_words = frozenset(enumerate_words(spec, a.length, cap=cap))
    return CylinderSet(a.base_index, a.length, all_words - a.words)
