"""Gibbs measures for finite-range potentials via the transfer operator.

A potential of range r induces a Markov chain on admissible states of
length max(r-1, 1); the normalized chain gives exact cylinder measures,
two-sided stationary sampling, and the pressure as the log of the leading
eigenvalue of the weighted transfer table.
"""

from dataclasses import dataclass

import numpy as np

from cocyclelab.subshift import (SizeCapExceeded, enumerate_words, is_transitive,
                                 size_cap, window_from_array)


class GibbsError(RuntimeError):
    pass


@dataclass(frozen=True)
class PotentialTable:
    """phi(x) depending on x_0..x_{range-1}, tabulated on admissible words."""

    range: int
    values: dict  # word tuple -> float

    def __post_init__(self):
        vals = {tuple(int(s) for s in w): float(v) for w, v in self.values.items()}
        if any(not np.isfinite(v) for v in vals.values()):
            raise ValueError("potential values must be finite")
        object.__setattr__(self, "values", vals)

    def validate(self, spec):
        for w in enumerate_words(spec, self.range):
            if tuple(w) not in self.values:
                raise ValueError(f"missing potential value for word {w}")

    def __call__(self, word):
        return self.values[tuple(word)]

    @staticmethod
    def zero(spec, r=1):
        return PotentialTable(r, {w: 0.0 for w in enumerate_words(spec, r)})

    @staticmethod
    def bernoulli(probs):
        """Range-1 potential log p_a on the full shift (pressure 0)."""
        return PotentialTable(1, {(a,): float(np.log(p)) for a, p in enumerate(probs)})

    def to_config(self):
        return {"range": self.range,
                "values": {"".join(map(str, w)): v for w, v in self.values.items()}}

    @staticmethod
    def from_config(obj):
        return PotentialTable(int(obj["range"]),
                              {tuple(int(c) for c in k): float(v)
                               for k, v in obj["values"].items()})


@dataclass(frozen=True)
class GibbsModel:
    """Stationary bilateral Markov law realizing the Gibbs measure."""

    spec: object
    potential: PotentialTable
    pressure: float
    state_len: int
    state_words: tuple           # admissible words of length state_len
    kernel: np.ndarray           # row-stochastic, states x states
    stationary: np.ndarray
    backward_kernel: np.ndarray
    eigenfunction: np.ndarray    # positive right eigenvector v0

    @property
    def state_index(self):
        return {w: i for i, w in enumerate(self.state_words)}

    def check_invariants(self, tol=1e-12):
        k, pi, bk = self.kernel, self.stationary, self.backward_kernel
        assert np.all(np.abs(k.sum(axis=1) - 1.0) <= 1e-12 + tol)
        assert np.all(np.abs(pi @ k - pi) <= 1e-12 + tol)
        # reversed-chain bookkeeping: bk[s'][s] * pi[s'] == k[s][s'] * pi[s]
        lhs = bk * pi[:, None]
        rhs = (k * pi[:, None]).T
        assert np.all(np.abs(lhs - rhs) <= 1e-12 + tol)
        assert np.all(self.eigenfunction > 0)


def _successors(spec, state):
    """States reachable in one step from `state`, with the emitted word of
    length state_len + 1 used to evaluate the potential."""
    out = []
    for b in range(spec.alphabet_size):
        word = state + (b,)
        if spec.word_admissible(word):
            out.append((state[1:] + (b,) if len(state) > 1 else (b,), word))
    return out


def build_gibbs(spec, potential, tol=1e-13, max_iter=20000):
    """Build the Gibbs model of a finite-range potential.

    Pressure is the log of the leading eigenvalue of the weighted transfer
    table; the kernel is e^{phi - P} v0(next)/v0(current).  Power iteration
    uses two-iterate averaging so transitive-but-not-mixing tables converge.
    """
    if not is_transitive(spec):
        raise GibbsError("spec is not transitive")
    if tol <= 0:
        raise ValueError("tol must be positive")
    r = potential.range
    s = max(r - 1, 1)
    states = tuple(enumerate_words(spec, s))
    idx = {w: i for i, w in enumerate(states)}
    n = len(states)
    if n > size_cap():
        raise SizeCapExceeded("state space exceeds size cap")

    # weighted transfer table: W[i, j] = e^{phi(word)} for allowed i -> j,
    # where word is the (s+1)-word formed by the step; phi reads its first
    # r coordinates.
    W = np.zeros((n, n))
    for i, st in enumerate(states):
        for nxt, word in _successors(spec, st):
            W[i, idx[nxt]] = np.exp(potential(word[:r]))

    # power iteration with two-iterate averaging for the leading eigenpair
    v = np.ones(n)
    lam = None
    for _ in range(max_iter):
        w1 = W @ v
        w2 = W @ w1
        avg = 0.5 * (w1 / np.linalg.norm(w1) + w2 / np.linalg.norm(w2))
        nrm = np.linalg.norm(avg)
        if nrm == 0:
            raise GibbsError("power iteration collapsed")
        avg = avg / nrm
        lam = (avg @ (W @ avg)) / (avg @ avg)
        if np.linalg.norm(W @ avg - lam * avg) <= tol * max(lam, 1.0):
            v = avg
            break
        v = avg
    else:
        raise GibbsError(f"power iteration did not reach tol={tol} in {max_iter} iterations")

    pressure = float(np.log(lam))
    v0 = v / v.max()
    if np.any(v0 <= 0):
        raise GibbsError("leading eigenvector is not strictly positive")

    kernel = W * v0[None, :] / (lam * v0[:, None])
    kernel = kernel / kernel.sum(axis=1, keepdims=True)

    # stationary law of the kernel (left eigenvector), via averaged iteration
    pi = np.ones(n) / n
    for _ in range(max_iter):
        p1 = pi @ kernel
        p2 = p1 @ kernel
        nxt = 0.5 * (p1 + p2)
        nxt = nxt / nxt.sum()
        if np.abs(nxt - pi).max() <= 1e-16:
            pi = nxt
            break
        pi = nxt
    pi = pi / pi.sum()
    for _ in range(8):  # polish to fixed point
        pi = pi @ kernel
        pi = pi / pi.sum()

    backward = (kernel * pi[:, None]).T / pi[:, None]
    backward = backward / backward.sum(axis=1, keepdims=True)

    model = GibbsModel(spec=spec, potential=potential, pressure=pressure,
                       state_len=s, state_words=states, kernel=kernel,
                       stationary=pi, backward_kernel=backward, eigenfunction=v0)
    model.check_invariants()
    return model


def cylinder_measure(model, word):
    """Exact Gibbs measure of the cylinder [word] (0 if inadmissible)."""
    word = tuple(int(a) for a in word)
    if len(word) < 1:
        raise ValueError("word must be nonempty")
    if not model.spec.word_admissible(word):
        return 0.0
    s = model.state_len
    idx = model.state_index
    if len(word) < s:
        return float(sum(model.stationary[i] for i, st in enumerate(model.state_words)
                         if st[:len(word)] == word))
    p = model.stationary[idx[word[:s]]]
    for t in range(len(word) - s):
        cur = word[t:t + s]
        nxt = word[t + 1:t + 1 + s]
        p *= model.kernel[idx[cur], idx[nxt]]
    return float(p)


def _admissible_extension(spec, word, extra):
    """Deterministic admissible right-extension (lexicographic-first)."""
    out = list(word)
    for _ in range(extra):
        for b in range(spec.alphabet_size):
            if spec.transitions[out[-1]][b]:
                out.append(b)
                break
    return tuple(out)


def birkhoff_potential(model, word):
    """S_n phi at the leftmost point of [word] extended deterministically;
    n = len(word)."""
    r = model.potential.range
    n = len(word)
    spec = model.spec
    # prefer the periodic extension when admissible, else lexicographic-first
    ext = tuple(word) + tuple(word)
    if not spec.word_admissible(ext[:n + r - 1]):
        ext = _admissible_extension(spec, word, r - 1)
    return float(sum(model.potential(ext[j:j + r]) for j in range(n)))


def verify_gibbs_bounds(model, n_max, cap=None, collect=None):
    """Best empirical Gibbs constant C >= 1 over words of length <= n_max.

    ratio = mu[word] / e^{S_n phi - n P}; returns max(ratio, 1/ratio) maxed
    over all admissible words.  `collect`, if given, receives (n, word, ratio)
    rows for CSV export.
    """
    best = 1.0
    for n in range(1, n_max + 1):
        for w in enumerate_words(model.spec, n, cap=cap):
            mu = cylinder_measure(model, w)
            ref = np.exp(birkhoff_potential(model, w) - n * model.pressure)
            ratio = mu / ref
            if collect is not None:
                collect((n, w, ratio))
            best = max(best, ratio, 1.0 / ratio)
    return float(best)


def sample_states(model, rng, length, batch=1):
    """Batch of stationary forward state paths (indices), shape (batch, length)."""
    n = len(model.state_words)
    cum_k = np.cumsum(model.kernel, axis=1)
    start = np.searchsorted(np.cumsum(model.stationary), rng.random(batch), side="right")
    start = np.minimum(start, n - 1)
    path = np.empty((batch, length), dtype=np.int64)
    path[:, 0] = start
    for t in range(1, length):
        u = rng.random(batch)
        row = cum_k[path[:, t - 1]]
        path[:, t] = np.minimum((row < u[:, None]).sum(axis=1), n - 1)
    return path


def sample_two_sided(model, rng, left, right, batch=1):
    """Stationary two-sided windows over indices -left..right.

    State at index 0 from the stationary law, forward via the kernel,
    backward via the reversed kernel; symbols are the first letters of the
    visited states.  Returns an array of shape (batch, left+right+1).
    """
    n = len(model.state_words)
    # states needed: indices -left .. right (state at i covers x_i..x_{i+s-1})
    fwd_len = right + 1
    cum_b = np.cumsum(model.backward_kernel, axis=1)
    states = np.empty((batch, left + fwd_len), dtype=np.int64)
    fwd = sample_states(model, rng, fwd_len, batch=batch)
    states[:, left:] = fwd
    for t in range(left):
        u = rng.random(batch)
        row = cum_b[states[:, left - t]]
        states[:, left - t - 1] = np.minimum((row < u[:, None]).sum(axis=1), n - 1)
    first = np.array([w[0] for w in model.state_words], dtype=np.int64)
    return first[states]


def sample_window(model, rng, left, right):
    """One PointWindow over -left..right from the stationary two-sided law."""
    sym = sample_two_sided(model, rng, left, right, batch=1)[0]
    return window_from_array(-left, sym)
