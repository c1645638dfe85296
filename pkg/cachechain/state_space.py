"""
Cache states over a content catalog.

A cache state is a sorted tuple of c distinct 1-based content ids. States are
indexed 0-based in lexicographic order of their tuples, so for N_f=5, c=2 the
order is {1,2},{1,3},{1,4},{1,5},{2,3},... . Two states are neighbors when they
differ in exactly one cached content.
"""
import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.linalg import eigvalsh

from cachechain import settings
from cachechain.errors import (
    ConfigError,
    ContentAlreadyCached,
    InvalidState,
    StateSpaceTooLarge,
    TruncationError,
)

log = logging.getLogger(__name__)

State = tuple[int, ...]


@dataclass(frozen=True)
class ContentCatalog:
    """Average request popularity phi_k for contents 1..N_f."""
    avg_popularity: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.avg_popularity, dtype=float).copy()
        if phi.ndim != 1 or phi.size < 1:
            raise ConfigError("Catalog needs at least one content")
        if not np.all(np.isfinite(phi)):
            raise ConfigError("Popularity must be finite")
        if np.any(phi < 0):
            raise ConfigError("Popularity must be non-negative")
        if not abs(phi.sum() - 1.0) <= settings.SIMPLEX_TOL:
            raise ConfigError(f"Popularity sums to {phi.sum():.15f}, expected 1")
        phi.setflags(write=False)
        object.__setattr__(self, "avg_popularity", phi)

    @property
    def n_contents(self) -> int:
        return int(self.avg_popularity.size)

    def phi(self, k: int) -> float:
        return float(self.avg_popularity[k - 1])

    @classmethod
    def zipf(cls, n_contents: int, s: float) -> "ContentCatalog":
        weights = np.arange(1, n_contents + 1, dtype=float) ** (-s)
        return cls(weights / weights.sum())

    @classmethod
    def from_counts(cls, counts) -> "ContentCatalog":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise ConfigError("Counts must contain at least one request")
        return cls(counts / total)


def rank_combination(contents: State, n_contents: int) -> int:
    """Lexicographic rank of a sorted c-combination of {1..n_contents}."""
    c = len(contents)
    rank = 0
    prev = 0
    for i, a in enumerate(contents, start=1):
        r = c - i + 1
        # sum_{j=prev+1}^{a-1} C(N-j, c-i), collapsed with the hockey-stick identity
        rank += math.comb(n_contents - prev, r) - math.comb(n_contents - a + 1, r)
        prev = a
    return rank


def unrank_combination(rank: int, n_contents: int, cache_size: int) -> State:
    out = []
    x = 1
    for i in range(1, cache_size + 1):
        while True:
            count = math.comb(n_contents - x, cache_size - i)
            if rank < count:
                out.append(x)
                x += 1
                break
            rank -= count
            x += 1
    return tuple(out)


class _Space:
    """Shared neighbor logic for full and reduced spaces."""
    n_contents: int
    cache_size: int

    @property
    def n_states(self) -> int:
        raise NotImplementedError

    def contents(self, m: int) -> State:
        raise NotImplementedError

    def find(self, contents: State) -> int | None:
        raise NotImplementedError

    @property
    def pinned(self) -> frozenset[int]:
        return frozenset()

    @property
    def free_slots(self) -> int:
        return self.cache_size - len(self.pinned)

    def index_of(self, contents) -> int:
        idx = self.find(tuple(sorted(contents)))
        if idx is None:
            raise InvalidState(f"State {tuple(sorted(contents))} is not in this space")
        return idx

    def _check_index(self, m: int) -> None:
        if not 0 <= m < self.n_states:
            raise InvalidState(f"State index {m} outside [0, {self.n_states})")

    def _swap_candidates(self) -> list[int]:
        return list(range(1, self.n_contents + 1))

    def neighbors_by_content(self, m: int, k: int) -> list[int]:
        self._check_index(m)
        g = self.contents(m)
        if k in g:
            raise ContentAlreadyCached(f"Content {k} already cached in state {m}")
        out = []
        for j in g:
            if j in self.pinned:
                continue
            idx = self.find(tuple(sorted((set(g) - {j}) | {k})))
            if idx is not None:
                out.append(idx)
        return sorted(out)

    def neighbors(self, m: int) -> list[int]:
        return self._neighbor_lists[m]

    def linking_content(self, dest: int, src: int) -> int:
        """Content that must be requested for src to move into dest."""
        added = set(self.contents(dest)) - set(self.contents(src))
        if len(added) != 1:
            raise InvalidState(f"States {src} and {dest} are not neighbors")
        return added.pop()

    @cached_property
    def _neighbor_lists(self) -> list[list[int]]:
        pool = self._swap_candidates()
        lists = []
        for m in range(self.n_states):
            g = self.contents(m)
            members = set(g)
            out = []
            for j in g:
                if j in self.pinned:
                    continue
                rest = members - {j}
                for k in pool:
                    if k in members:
                        continue
                    idx = self.find(tuple(sorted(rest | {k})))
                    if idx is not None:
                        out.append(idx)
            lists.append(sorted(out))
        return lists

    def state_matrix(self) -> "StateMatrix":
        return state_matrix(self)


class StateSpace(_Space):
    """All C(N_f, c) cache states in lexicographic order."""

    def __init__(self, n_contents: int, cache_size: int, cap: int | None = None):
        if not 1 <= cache_size <= n_contents:
            raise ConfigError(f"Need 1 <= cache_size <= n_contents, got c={cache_size}, N_f={n_contents}")
        cap = settings.STATE_CAP if cap is None else cap
        n = math.comb(n_contents, cache_size)
        if n > cap:
            raise StateSpaceTooLarge(
                f"State space too large ({n} states > cap {cap}); use truncation"
            )
        self.n_contents = n_contents
        self.cache_size = cache_size
        self._n = n

    def __repr__(self) -> str:
        return f"StateSpace(n_contents={self.n_contents}, cache_size={self.cache_size})"

    @property
    def n_states(self) -> int:
        return self._n

    @cached_property
    def states(self) -> list[State]:
        return list(itertools.combinations(range(1, self.n_contents + 1), self.cache_size))

    @cached_property
    def _lookup(self) -> dict[State, int]:
        return {s: i for i, s in enumerate(self.states)}

    def contents(self, m: int) -> State:
        self._check_index(m)
        return self.states[m]

    def find(self, contents: State) -> int | None:
        return self._lookup.get(contents)

    def rank(self, contents) -> int:
        contents = tuple(sorted(contents))
        if len(contents) != self.cache_size or len(set(contents)) != self.cache_size:
            raise InvalidState(f"{contents} is not a {self.cache_size}-subset")
        if contents[0] < 1 or contents[-1] > self.n_contents:
            raise InvalidState(f"{contents} has ids outside [1, {self.n_contents}]")
        return rank_combination(contents, self.n_contents)

    def unrank(self, m: int) -> State:
        self._check_index(m)
        return unrank_combination(m, self.n_contents, self.cache_size)


def enumerate_states(n_contents: int, cache_size: int, cap: int | None = None) -> StateSpace:
    return StateSpace(n_contents, cache_size, cap=cap)


def neighbors(space: _Space, m: int) -> list[int]:
    return space.neighbors(m)


def neighbors_by_content(space: _Space, m: int, k: int) -> list[int]:
    return space.neighbors_by_content(m, k)


class ReducedStateSpace(_Space):
    """An explicit subset of cache states, kept in lexicographic order."""

    def __init__(
        self,
        n_contents: int,
        cache_size: int,
        states: list[State],
        pinned: frozenset[int] = frozenset(),
        index_map: list[int] | None = None,
    ):
        self.n_contents = n_contents
        self.cache_size = cache_size
        self._states = sorted(tuple(sorted(s)) for s in states)
        self._pinned = frozenset(pinned)
        self._lookup = {s: i for i, s in enumerate(self._states)}
        if len(self._lookup) != len(self._states):
            raise InvalidState("Duplicate states in reduced space")
        if index_map is None:
            index_map = [rank_combination(s, n_contents) for s in self._states]
        self.index_map = index_map

    def __repr__(self) -> str:
        return (
            f"ReducedStateSpace(n_contents={self.n_contents}, cache_size={self.cache_size}, "
            f"n_states={self.n_states}, pinned={sorted(self._pinned)})"
        )

    @property
    def n_states(self) -> int:
        return len(self._states)

    @property
    def states(self) -> list[State]:
        return self._states

    @property
    def pinned(self) -> frozenset[int]:
        return self._pinned

    @cached_property
    def active_contents(self) -> frozenset[int]:
        return frozenset(k for s in self._states for k in s)

    def _swap_candidates(self) -> list[int]:
        return sorted(self.active_contents)

    def contents(self, m: int) -> State:
        self._check_index(m)
        return self._states[m]

    def find(self, contents: State) -> int | None:
        return self._lookup.get(contents)


@dataclass(frozen=True)
class StateMatrix:
    """N_f x n 0-1 matrix S; column m is the indicator of state m."""
    entries: sparse.csc_array
    cache_size: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def dense(self) -> np.ndarray:
        return self.entries.toarray()

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.entries.sum(axis=0)).ravel()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.entries.sum(axis=1)).ravel()

    def gram(self) -> np.ndarray:
        return (self.entries @ self.entries.T).toarray()

    def min_singular_value(self) -> float:
        """Smallest of the min(N_f, n) singular values, from the smaller Gram matrix."""
        rows, cols = self.shape
        gram = self.gram() if rows <= cols else (self.entries.T @ self.entries).toarray()
        eig = eigvalsh(gram)
        return float(np.sqrt(max(eig[0], 0.0)))

    def __matmul__(self, eta: np.ndarray) -> np.ndarray:
        return self.entries @ np.asarray(eta, dtype=float)


def state_matrix(space: _Space) -> StateMatrix:
    rows, cols = [], []
    for m in range(space.n_states):
        for k in space.contents(m):
            rows.append(k - 1)
            cols.append(m)
    data = np.ones(len(rows))
    entries = sparse.csc_array((data, (rows, cols)), shape=(space.n_contents, space.n_states))
    return StateMatrix(entries=entries, cache_size=space.cache_size)


@dataclass(frozen=True)
class TruncationConfig:
    drop_zero_prob: bool = True
    pin_certain: bool = True
    top_k_states: int | None = None
    zero_tol: float = field(default=1e-12)


def top_weight_subsets(weights: dict[int, float], size: int, k: int) -> list[State]:
    """
    The k size-subsets of weights' keys with the largest total weight, ties by
    lexicographic order of the sorted subset.

    Best-first search over index tuples into the weight-sorted candidate list:
    a subset's successors move one position one step towards lighter items, so
    every predecessor outranks its successors and the heap pops in exact order.
    """
    items = sorted(weights, key=lambda x: (-weights[x], x))
    n = len(items)
    if size == 0:
        return [()]
    w = [weights[x] for x in items]

    def key(pos: tuple[int, ...]):
        chosen = tuple(sorted(items[p] for p in pos))
        return (-math.fsum(w[p] for p in pos), chosen)

    start = tuple(range(size))
    heap = [(key(start), start)]
    seen = {start}
    out: list[State] = []
    while heap and len(out) < k:
        (neg_w, chosen), pos = heapq.heappop(heap)
        out.append(chosen)
        for i in range(size):
            nxt = pos[i] + 1
            limit = pos[i + 1] if i + 1 < size else n
            if nxt < limit:
                succ = pos[:i] + (nxt,) + pos[i + 1:]
                if succ not in seen:
                    seen.add(succ)
                    heapq.heappush(heap, (key(succ), succ))
    return out


def truncate(
    space: StateSpace | None,
    catalog: ContentCatalog,
    placement_target,
    config: TruncationConfig,
    cache_size: int | None = None,
) -> tuple[ReducedStateSpace, list[int]]:
    """
    Reduce the state universe: drop p_k = 0 contents, pin p_k = 1 contents and
    optionally keep only the top_k_states states by cached popularity.

    `space` may be None when the full space is too large to build; the catalog
    and cache_size then define it.
    """
    n_contents = catalog.n_contents
    c = space.cache_size if space is not None else cache_size
    if c is None:
        raise ConfigError("truncate needs a space or an explicit cache_size")
    p = np.asarray(placement_target.probs if hasattr(placement_target, "probs") else placement_target, dtype=float)
    if p.size != n_contents:
        raise ConfigError(f"Placement target has {p.size} entries, catalog has {n_contents}")
    tol = config.zero_tol

    pinned = frozenset(k for k in range(1, n_contents + 1) if config.pin_certain and p[k - 1] >= 1 - tol)
    candidates = [
        k for k in range(1, n_contents + 1)
        if k not in pinned and not (config.drop_zero_prob and p[k - 1] <= tol)
    ]
    free = c - len(pinned)
    if free < 0 or free > len(candidates):
        raise TruncationError(
            f"Cannot fill {c} slots: {len(pinned)} pinned, {len(candidates)} candidates"
        )
    available = math.comb(len(candidates), free)
    log.debug("truncate: %d pinned, %d candidates, %d free slots, %d states available",
              len(pinned), len(candidates), free, available)

    if config.top_k_states is not None:
        if config.top_k_states < 1 or config.top_k_states > available:
            raise TruncationError(
                f"Requested {config.top_k_states} states but only {available} are available"
            )
        weights = {k: catalog.phi(k) for k in candidates}
        combos = top_weight_subsets(weights, free, config.top_k_states)
    else:
        if available > settings.STATE_CAP:
            raise StateSpaceTooLarge(
                f"Reduced space still has {available} states; set top_k_states"
            )
        combos = list(itertools.combinations(candidates, free))

    states = [tuple(sorted(pinned | set(combo))) for combo in combos]
    reduced = ReducedStateSpace(n_contents, c, states, pinned=pinned)
    return reduced, reduced.index_map
