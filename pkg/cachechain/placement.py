"""
Probabilistic content placement: map content caching probabilities p to a
distribution eta over cache states with S eta = p, and sample initial states.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import pinvh
from scipy.optimize import linprog, minimize
from scipy.special import logsumexp, softmax

from cachechain import settings
from cachechain.errors import ConfigError, InfeasibleTarget
from cachechain.state_space import ContentCatalog, StateMatrix, _Space

log = logging.getLogger(__name__)

STRATEGIES = ("min_support", "min_norm", "max_entropy")
EXACT_SUPPORT_LIMIT = 2000


@dataclass(frozen=True)
class PlacementTarget:
    """Per-content caching probabilities p_k, k = 1..N_f, summing to the cache size."""
    probs: np.ndarray
    cache_size: int

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).copy()
        if p.ndim != 1:
            raise ConfigError("Placement target must be a vector")
        if not np.all(np.isfinite(p)):
            raise ConfigError("Caching probabilities must be finite")
        if np.any(p < -settings.RESIDUAL_TOL) or np.any(p > 1 + settings.RESIDUAL_TOL):
            raise ConfigError("Caching probabilities must lie in [0, 1]")
        if not abs(p.sum() - self.cache_size) <= settings.RESIDUAL_TOL:
            raise ConfigError(f"Caching probabilities sum to {p.sum():.12f}, cache size is {self.cache_size}")
        p = np.clip(p, 0.0, 1.0)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_contents(self) -> int:
        return int(self.probs.size)

    def pinned(self, tol: float = settings.SIMPLEX_TOL) -> np.ndarray:
        return np.flatnonzero(self.probs >= 1 - tol) + 1

    def excluded(self, tol: float = settings.SIMPLEX_TOL) -> np.ndarray:
        return np.flatnonzero(self.probs <= tol) + 1


def capped_proportional(catalog: ContentCatalog, cache_size: int) -> PlacementTarget:
    """p_k = min(1, lambda * phi_k) with lambda set so that sum p = c (water filling)."""
    phi = catalog.avg_popularity
    if np.count_nonzero(phi) < cache_size:
        raise ConfigError("Fewer requested contents than cache slots")
    p = np.zeros_like(phi)
    capped = np.zeros(phi.size, dtype=bool)
    while True:
        budget = cache_size - capped.sum()
        rest = phi[~capped].sum()
        p[capped] = 1.0
        if budget <= 0 or rest <= 0:
            p[~capped] = 0.0
            break
        p[~capped] = phi[~capped] * (budget / rest)
        over = (~capped) & (p >= 1.0)
        if not over.any():
            break
        capped |= over
    return PlacementTarget(p, cache_size)


def top_c(catalog: ContentCatalog, cache_size: int) -> PlacementTarget:
    """Deterministic placement of the c most popular contents, ties by content id."""
    order = np.lexsort((np.arange(catalog.n_contents), -catalog.avg_popularity))
    p = np.zeros(catalog.n_contents)
    p[order[:cache_size]] = 1.0
    return PlacementTarget(p, cache_size)


@dataclass(frozen=True)
class StateDistribution:
    """Probability eta^l for every state l of a space, indexed like the space."""
    probs: np.ndarray
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        eta = np.asarray(self.probs, dtype=float).copy()
        if self.check:
            if np.any(eta < -settings.SIMPLEX_TOL):
                raise InfeasibleTarget("State distribution has negative entries")
            if abs(eta.sum() - 1.0) > settings.SIMPLEX_TOL:
                raise InfeasibleTarget(f"State distribution sums to {eta.sum():.15f}")
            eta[eta < settings.SNAP_TOL] = 0.0
        eta.setflags(write=False)
        object.__setattr__(self, "probs", eta)

    @classmethod
    def unchecked(cls, probs) -> "StateDistribution":
        return cls(probs, check=False)

    @property
    def n_states(self) -> int:
        return int(self.probs.size)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(self.probs[i]) for i in self.support}

    def to_doc(self, space: _Space) -> dict:
        support = self.support
        return {
            "n_states": self.n_states,
            "support": [int(i) for i in support],
            "probs": [float(self.probs[i]) for i in support],
            "states": [list(space.contents(int(i))) for i in support],
        }

    @classmethod
    def from_doc(cls, doc: dict, space: _Space) -> "StateDistribution":
        if doc["n_states"] != space.n_states:
            raise ConfigError(f"Stored distribution has {doc['n_states']} states, space has {space.n_states}")
        eta = np.zeros(space.n_states)
        for i, state, p in zip(doc["support"], doc["states"], doc["probs"]):
            if space.contents(i) != tuple(state):
                raise ConfigError(f"Stored state {i} is {state}, space has {space.contents(i)}")
            eta[i] = p
        return cls(eta)


# --- Solvers for S eta = p ---


def _lp_vertex(S: np.ndarray, p: np.ndarray, upper: np.ndarray) -> np.ndarray | None:
    res = linprog(
        c=np.zeros(S.shape[1]),
        A_eq=S,
        b_eq=p,
        bounds=np.column_stack([np.zeros(S.shape[1]), upper]),
        method="highs-ds",
    )
    if res.status != 0:
        return None
    x = np.clip(res.x, 0.0, None)
    x[x < settings.SNAP_TOL] = 0.0
    return x


def _polish(S: np.ndarray, p: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Re-solve on the support so the residual sits at machine precision."""
    support = np.flatnonzero(x > 0)
    sol, *_ = np.linalg.lstsq(S[:, support], p, rcond=None)
    if np.all(sol >= 0):
        x = np.zeros_like(x)
        x[support] = sol
    return x


def _min_support(S: np.ndarray, p: np.ndarray) -> np.ndarray:
    n = S.shape[1]
    upper = np.full(n, np.inf)
    x = _lp_vertex(S, p, upper)
    if x is None:
        raise InfeasibleTarget("No state distribution implements this placement target")
    if n <= EXACT_SUPPORT_LIMIT:
        # iterative zero-pinning: keep a pin whenever the support shrinks
        improved = True
        while improved:
            improved = False
            for j in np.flatnonzero(x > 0)[np.argsort(x[x > 0], kind="stable")]:
                trial_upper = upper.copy()
                trial_upper[j] = 0.0
                y = _lp_vertex(S, p, trial_upper)
                if y is not None and np.count_nonzero(y) < np.count_nonzero(x):
                    upper, x = trial_upper, y
                    improved = True
                    break
    return _polish(S, p, x)


def _min_norm(S: np.ndarray, p: np.ndarray) -> np.ndarray | None:
    x = S.T @ (pinvh(S @ S.T) @ p)
    if np.min(x) < -settings.SIMPLEX_TOL:
        return None
    x = np.clip(x, 0.0, None)
    x[x < settings.SNAP_TOL] = 0.0
    return x


def _max_entropy(S: np.ndarray, p: np.ndarray) -> np.ndarray | None:
    """
    Maximum-entropy eta: eta_l proportional to exp(sum_{k in G^l} theta_k) over
    states that hold every p=1 content and no p=0 content.
    """
    tol = settings.SIMPLEX_TOL
    pinned = p >= 1 - tol
    zero = p <= tol
    free = ~(pinned | zero)
    eligible = np.all(S[pinned] == 1, axis=0) & np.all(S[zero] == 0, axis=0)
    if not eligible.any():
        return None
    x = np.zeros(S.shape[1])
    if not free.any():
        if eligible.sum() != 1:
            return None
        x[eligible] = 1.0
        return x

    A = S[np.ix_(free, eligible)].T  # eligible states x free contents
    target = p[free]
    # theta for the last free content is fixed at 0: every state holds the same
    # number of free contents, so adding a constant to theta changes nothing.
    A_red = A[:, :-1]
    t_red = target[:-1]
    if A_red.shape[1] == 0:
        x[eligible] = 1.0 / eligible.sum()
        return x

    def objective(theta):
        z = A_red @ theta
        eta = softmax(z)
        grad = A_red.T @ eta - t_red
        return logsumexp(z) - theta @ t_red, grad

    def hessian(theta):
        eta = softmax(A_red @ theta)
        mean = A_red.T @ eta
        return (A_red.T * eta) @ A_red - np.outer(mean, mean)

    res = minimize(
        objective,
        np.zeros(A_red.shape[1]),
        jac=True,
        hess=hessian,
        method="trust-exact",
        options={"gtol": 1e-13, "maxiter": 1000},
    )
    eta = softmax(A_red @ res.x)
    if np.max(np.abs(A.T @ eta - target)) > settings.RESIDUAL_TOL:
        log.warning("max-entropy solve stopped at residual %.3e (%s)",
                    np.max(np.abs(A.T @ eta - target)), res.message)
        return None
    x[eligible] = eta
    return x


def solve_eta(
    target: PlacementTarget,
    matrix: StateMatrix,
    strategy: str = "min_support",
) -> StateDistribution:
    """
    A state distribution eta with S eta = p.

    min_support: LP vertex, then zero-pinning towards the fewest states.
    min_norm:    S^T (S S^T)^+ p when it is non-negative, min_support otherwise.
    max_entropy: strictly positive on every eligible state (connected support).
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"Unknown placement strategy {strategy!r}; pick one of {STRATEGIES}")
    if matrix.shape[0] != target.n_contents:
        raise ConfigError(f"State matrix has {matrix.shape[0]} rows, target has {target.n_contents} contents")
    S = matrix.dense()
    p = np.asarray(target.probs, dtype=float)

    x = None
    if strategy == "min_norm":
        x = _min_norm(S, p)
        if x is None:
            log.warning("min-norm solution has negative entries, falling back to min_support")
    elif strategy == "max_entropy":
        x = _max_entropy(S, p)
        if x is None:
            log.info("max-entropy solve failed, falling back to min_support")
    if x is None:
        x = _min_support(S, p)

    x = x / x.sum()
    residual = np.max(np.abs(S @ x - p))
    if residual > settings.RESIDUAL_TOL:
        raise InfeasibleTarget(f"Placement residual {residual:.3e} exceeds {settings.RESIDUAL_TOL}")
    log.debug("solve_eta[%s]: support %d of %d states, residual %.2e",
              strategy, np.count_nonzero(x), x.size, residual)
    return StateDistribution(x)


def popularity_weighted_eta(space: _Space, catalog: ContentCatalog) -> StateDistribution:
    """eta^l proportional to the cached popularity sum_{k in G^l} phi_k."""
    weights = np.array([
        sum(catalog.phi(k) for k in space.contents(m)) for m in range(space.n_states)
    ])
    if weights.sum() <= 0:
        raise InfeasibleTarget("Every state caches only zero-popularity contents")
    return StateDistribution(weights / weights.sum())


# --- Block filling ---


@dataclass(frozen=True)
class BlockLayout:
    """Blocks of length p_k laid end to end over c unit rows, wrapping between rows."""
    cache_size: int
    order: tuple[int, ...]
    starts: np.ndarray
    ends: np.ndarray

    @property
    def breakpoints(self) -> np.ndarray:
        cuts = np.concatenate([self.starts % 1.0, self.ends % 1.0, [0.0]])
        return np.unique(np.round(cuts, 15))

    def segments(self) -> list[tuple[int, int, float, float]]:
        """(content, row, start, end) pieces, each within one row."""
        out = []
        for k, a, b in zip(self.order, self.starts, self.ends):
            row = int(np.floor(a))
            if b <= row + 1:
                out.append((k, row, a - row, b - row))
            else:
                out.append((k, row, a - row, 1.0))
                out.append((k, row + 1, 0.0, b - row - 1))
        return out

    def crossed(self, x: float) -> tuple[int, ...]:
        """Contents cut by the vertical line at x in [0, 1)."""
        hits = []
        for r in range(self.cache_size):
            y = x + r
            i = int(np.searchsorted(self.ends, y, side="right"))
            hits.append(self.order[i])
        if len(set(hits)) != len(hits):
            raise InfeasibleTarget(f"Block layout crosses a content twice at x={x}")
        return tuple(sorted(hits))


def default_ordering(target: PlacementTarget) -> tuple[int, ...]:
    ids = np.arange(1, target.n_contents + 1)
    return tuple(int(k) for k in ids[np.lexsort((ids, -target.probs))])


def block_layout(target: PlacementTarget, ordering=None) -> BlockLayout:
    order = tuple(ordering) if ordering is not None else default_ordering(target)
    if sorted(order) != list(range(1, target.n_contents + 1)):
        raise ConfigError("Ordering must be a permutation of all content ids")
    kept = tuple(k for k in order if target.probs[k - 1] > 0)
    lengths = np.array([target.probs[k - 1] for k in kept])
    ends = np.cumsum(lengths)
    starts = ends - lengths
    # the last block closes the final row exactly
    ends[-1] = float(target.cache_size)
    return BlockLayout(target.cache_size, kept, starts, ends)


def block_filling_eta(target: PlacementTarget, space: _Space, ordering=None) -> StateDistribution:
    """State distribution induced by a uniform vertical cut through the block layout."""
    layout = block_layout(target, ordering)
    cuts = np.append(layout.breakpoints, 1.0)
    eta = np.zeros(space.n_states)
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= 0:
            continue
        state = layout.crossed(0.5 * (a + b))
        eta[space.index_of(state)] += b - a
    return StateDistribution(eta / eta.sum())


# --- Sampling and validation ---


def sample_state(eta: StateDistribution, u: float) -> int:
    """Inverse-CDF draw over the support in index order; state l is chosen when cdf_{l-1} < u <= cdf_l."""
    support = eta.support
    cdf = np.cumsum(eta.probs[support])
    i = int(np.searchsorted(cdf, u, side="left"))
    return int(support[min(i, support.size - 1)])


def sample_states(eta: StateDistribution, rng: np.random.Generator, size: int) -> np.ndarray:
    support = eta.support
    cdf = np.cumsum(eta.probs[support])
    idx = np.searchsorted(cdf, rng.random(size), side="left")
    return support[np.minimum(idx, support.size - 1)]


@dataclass
class EtaReport:
    residual_inf: float
    total: float
    min_entry: float
    support_violations: list[int]
    passed: bool
    messages: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "residual_inf": self.residual_inf,
            "total": self.total,
            "min_entry": self.min_entry,
            "support_violations": self.support_violations,
            "passed": self.passed,
            "messages": self.messages,
        }


def validate_eta(eta, target: PlacementTarget, matrix: StateMatrix, tol: float = settings.RESIDUAL_TOL) -> EtaReport:
    probs = np.asarray(eta.probs if isinstance(eta, StateDistribution) else eta, dtype=float)
    S = matrix.dense()
    p = np.asarray(target.probs)
    messages = []

    residual = float(np.max(np.abs(S @ probs - p)))
    if residual > tol:
        messages.append(f"S eta differs from p by {residual:.3e}")
    total = float(probs.sum())
    min_entry = float(probs.min())
    if abs(total - 1.0) > settings.SIMPLEX_TOL:
        messages.append(f"eta sums to {total:.15f}")
    if min_entry < -settings.SIMPLEX_TOL:
        messages.append(f"eta has a negative entry {min_entry:.3e}")

    pinned = p >= 1 - settings.SIMPLEX_TOL
    zero = p <= settings.SIMPLEX_TOL
    bad = (np.any(S[pinned] == 0, axis=0) | np.any(S[zero] == 1, axis=0)) & (probs > settings.SIMPLEX_TOL)
    violations = [int(i) for i in np.flatnonzero(bad)]
    if violations:
        messages.append(f"{len(violations)} states violate the p=0 / p=1 support rule")

    return EtaReport(
        residual_inf=residual,
        total=total,
        min_entry=min_entry,
        support_violations=violations,
        passed=not messages,
        messages=messages,
    )
