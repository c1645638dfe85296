"""
Replacement Markov chain compilation.

Given a target state distribution eta* and average popularity phi, build a
column-stochastic transition matrix Theta over the support of eta* whose unique
steady state is eta*, then read off the replacement probabilities tau. Column m
of Theta holds the outgoing probabilities of state m; Theta(m', m) is nonzero
only for neighbor states, and every off-diagonal entry is bounded by
omega * phi of the content linking the two states.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.sparse.linalg import spsolve

from cachechain import settings
from cachechain.errors import DisconnectedSupport, InconsistentPolicy, LimitInfeasible
from cachechain.placement import StateDistribution
from cachechain.state_space import ContentCatalog, _Space

log = logging.getLogger(__name__)


# --- Acceptance limits ---


@dataclass(frozen=True)
class ScaledAcceptance:
    """omega_{k,m',m} = factor / (replaceable slots); factor 1 always admits a requested content."""
    factor: float = 1.0

    def __post_init__(self):
        if not 0 < self.factor <= 1:
            raise LimitInfeasible(f"Acceptance factor must lie in (0, 1], got {self.factor}")

    def limit(self, space: _Space, k: int, dest: int, src: int) -> float:
        return self.factor / space.free_slots


# --- Support ordering and V / X ---


def sort_by_eta(eta_star: StateDistribution) -> tuple[np.ndarray, np.ndarray]:
    """Support states in non-increasing eta order, ties by state index."""
    support = eta_star.support
    if support.size == 0:
        raise DisconnectedSupport("State distribution has an empty support", [])
    values = eta_star.probs[support]
    order = support[np.lexsort((support, -values))]
    return order, eta_star.probs[order]


class SupportGraph:
    """Neighbor structure of the eta* support, with positions in sorted order."""

    def __init__(self, space: _Space, eta_star: StateDistribution):
        self.space = space
        self.eta = eta_star.probs
        self.order, _ = sort_by_eta(eta_star)
        self.position = {int(m): i for i, m in enumerate(self.order)}
        self.adj = {
            int(m): [n for n in space.neighbors(int(m)) if n in self.position]
            for m in self.order
        }

    def v_of(self, m: int, among=None) -> int | None:
        """Closest neighbor at or above m in the order (smallest eta >= eta^m)."""
        pos = self.position[m]
        best = None
        for n in self.adj[m]:
            if among is not None and n not in among:
                continue
            if self.position[n] < pos and (best is None or self.position[n] > self.position[best]):
                best = n
        return best

    def x_of(self, m: int, among=None) -> int | None:
        """Closest neighbor at or below m in the order (largest eta <= eta^m)."""
        pos = self.position[m]
        best = None
        for n in self.adj[m]:
            if among is not None and n not in among:
                continue
            if self.position[n] > pos and (best is None or self.position[n] < self.position[best]):
                best = n
        return best


def v_of(graph: SupportGraph, m: int) -> int | None:
    return graph.v_of(m)


def x_of(graph: SupportGraph, m: int) -> int | None:
    return graph.x_of(m)


# --- Sequence decomposition ---


@dataclass(frozen=True)
class SequenceDecomposition:
    sequences: list[list[int]]
    branch: list[int | None]
    merge: list[int | None]
    order: np.ndarray
    marked: frozenset[int]

    def to_dict(self) -> dict:
        return {
            "sequences": self.sequences,
            "branch": self.branch,
            "merge": self.merge,
            "marked": sorted(self.marked),
        }


def _sequence_pass(graph: SupportGraph, s0: list[int], placed: set[int], marked: set[int]):
    """One run of the sequence procedure: returns (S, L)."""
    start = 0
    if placed:
        while start < len(s0) and not any(n in placed for n in graph.adj[s0[start]]):
            start += 1
        if start == len(s0):
            return [], s0
    seq = [s0[start]]
    kept = {s0[start]}
    rest = list(s0[:start])
    members = set(s0)
    for m in s0[start + 1:]:
        if seq[-1] in graph.adj[m]:
            seq.append(m)
            kept.add(m)
            x = graph.x_of(m, among=members)
            if x is not None and graph.v_of(x, among=members) != m:
                marked.add(x)
        else:
            v = graph.v_of(m, among=kept)
            if v is not None:
                marked.add(v)
            rest.append(m)
    return seq, rest


def _pick(graph: SupportGraph, candidates: list[int], marked: set[int], largest: bool) -> int | None:
    if not candidates:
        return None
    sign = -1.0 if largest else 1.0
    return min(candidates, key=lambda n: (n not in marked, sign * graph.eta[n], n))


def build_sequences(eta_star: StateDistribution, space: _Space) -> SequenceDecomposition:
    """Split the sorted support into ordered neighbor sequences with branch and merge points."""
    graph = SupportGraph(space, eta_star)
    remaining = [int(m) for m in graph.order]
    placed: set[int] = set()
    marked: set[int] = set()
    sequences, branches, merges = [], [], []

    while remaining:
        seq, remaining = _sequence_pass(graph, remaining, placed, marked)
        if not seq:
            unreachable = [space.contents(m) for m in remaining]
            raise DisconnectedSupport(
                f"Support is disconnected: {len(remaining)} states unreachable, e.g. {unreachable[:5]}",
                unreachable,
            )
        if placed:
            head_links = [n for n in graph.adj[seq[0]] if n in placed]
            tail_links = [n for n in graph.adj[seq[-1]] if n in placed]
            b = _pick(graph, head_links, marked, largest=True)
            if len(seq) == 1:
                tail_links = [n for n in tail_links if n != b]
            m = _pick(graph, tail_links, marked, largest=False)
        else:
            b = m = None
        sequences.append(seq)
        branches.append(b)
        merges.append(m)
        placed.update(seq)

    log.debug("build_sequences: %d sequences, lengths %s", len(sequences), [len(s) for s in sequences])
    return SequenceDecomposition(sequences, branches, merges, graph.order, frozenset(marked))


# --- Transition matrices ---


@dataclass(frozen=True)
class TransitionMatrix:
    """Column-stochastic Theta over `states` (space indices, ascending)."""
    space: _Space
    states: np.ndarray
    matrix: sparse.csc_array

    @property
    def n(self) -> int:
        return int(self.states.size)

    @property
    def local(self) -> dict[int, int]:
        return {int(m): i for i, m in enumerate(self.states)}

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def get(self, dest: int, src: int) -> float:
        loc = self.local
        return float(self.matrix[loc[dest], loc[src]])

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def offdiag_nnz(self) -> np.ndarray:
        m = self.matrix.tocoo()
        mask = (m.row != m.col) & (m.data != 0)
        return np.bincount(m.col[mask], minlength=self.n)

    def to_triplets(self) -> dict:
        m = self.matrix.tocoo()
        keep = m.data != 0
        return {
            "rows": [int(self.states[i]) for i in m.row[keep]],
            "cols": [int(self.states[j]) for j in m.col[keep]],
            "values": [float(v) for v in m.data[keep]],
            "states": [list(self.space.contents(int(s))) for s in self.states],
        }

    @classmethod
    def from_dense(cls, space: _Space, states, dense: np.ndarray) -> "TransitionMatrix":
        return cls(space, np.asarray(states, dtype=int), sparse.csc_array(np.asarray(dense, dtype=float)))


class ChainBuilder:
    """Mutable Theta used while running the pairwise balance updates."""

    def __init__(self, space: _Space, eta_star: StateDistribution, catalog: ContentCatalog, limits=None):
        self.space = space
        self.catalog = catalog
        self.limits = limits or ScaledAcceptance()
        self.states = np.sort(eta_star.support)
        self.local = {int(m): i for i, m in enumerate(self.states)}
        self.eta = eta_star.probs[self.states]
        self.diag = np.ones(self.states.size)
        self.cols: list[dict[int, float]] = [{} for _ in range(self.states.size)]

    @classmethod
    def from_matrix(cls, theta: TransitionMatrix, eta_star: StateDistribution, catalog: ContentCatalog, limits=None):
        builder = cls(theta.space, eta_star, catalog, limits)
        if not np.array_equal(builder.states, theta.states):
            raise InconsistentPolicy("Transition matrix states differ from the eta* support")
        builder.diag = np.asarray(theta.matrix.diagonal(), dtype=float).copy()
        coo = theta.matrix.tocoo()
        for i, j, v in zip(coo.row, coo.col, coo.data):
            if i != j and v != 0:
                builder.cols[j][int(i)] = float(v)
        return builder

    def get(self, dest: int, src: int) -> float:
        i, j = self.local[dest], self.local[src]
        if i == j:
            return float(self.diag[j])
        return self.cols[j].get(i, 0.0)

    def dense(self) -> np.ndarray:
        out = np.diag(self.diag)
        for j, col in enumerate(self.cols):
            for i, v in col.items():
                out[i, j] = v
        return out

    def freeze(self) -> TransitionMatrix:
        rows, cols, vals = [], [], []
        for j, col in enumerate(self.cols):
            rows.append(j)
            cols.append(j)
            vals.append(self.diag[j])
            for i, v in col.items():
                rows.append(i)
                cols.append(j)
                vals.append(v)
        n = self.states.size
        matrix = sparse.csc_array((vals, (rows, cols)), shape=(n, n))
        matrix.sort_indices()
        return TransitionMatrix(self.space, self.states.copy(), matrix)


def _snap(v: float) -> float:
    if abs(v) < settings.SNAP_TOL:
        return 0.0
    if abs(v - 1.0) < settings.SNAP_TOL:
        return 1.0
    return v


def basic_update(theta: ChainBuilder, m: int, m_prime: int) -> float:
    """
    Link neighbor states m -> m' while keeping Theta eta* = eta*.

    delta = min(omega phi_{m',m}, omega' phi_{m,m'} eta^{m'} / eta^m), measured
    against what the pair already carries, so a repeated call is a no-op.
    Returns the delta applied.
    """
    space = theta.space
    k = space.linking_content(m_prime, m)
    k_back = space.linking_content(m, m_prime)
    i, j = theta.local[m_prime], theta.local[m]
    eta_m, eta_mp = theta.eta[j], theta.eta[i]

    fwd = theta.limits.limit(space, k, m_prime, m) * theta.catalog.phi(k) - theta.cols[j].get(i, 0.0)
    back = theta.limits.limit(space, k_back, m, m_prime) * theta.catalog.phi(k_back) - theta.cols[i].get(j, 0.0)
    delta = min(fwd, back * eta_mp / eta_m)
    if delta <= 0:
        return 0.0

    ratio = eta_m / eta_mp
    new_jj = theta.diag[j] - delta
    new_ii = theta.diag[i] - delta * ratio
    if new_jj < -settings.SNAP_TOL or new_ii < -settings.SNAP_TOL:
        raise LimitInfeasible(
            f"Acceptance limits too large for states {space.contents(m)} and {space.contents(m_prime)}"
        )
    theta.cols[j][i] = _snap(theta.cols[j].get(i, 0.0) + delta)
    theta.cols[i][j] = _snap(theta.cols[i].get(j, 0.0) + delta * ratio)
    theta.diag[j] = _snap(max(new_jj, 0.0))
    theta.diag[i] = _snap(max(new_ii, 0.0))
    return delta


def generate_theta(
    eta_star: StateDistribution,
    catalog: ContentCatalog,
    space: _Space,
    decomposition: SequenceDecomposition,
    limits=None,
) -> TransitionMatrix:
    """Connect each sequence at its branch and merge points, then link it tail to head."""
    builder = ChainBuilder(space, eta_star, catalog, limits)
    for seq, b, mg in zip(decomposition.sequences, decomposition.branch, decomposition.merge):
        if b is not None:
            basic_update(builder, b, seq[0])
        if mg is not None:
            basic_update(builder, mg, seq[-1])
        for q in range(len(seq) - 1, 0, -1):
            basic_update(builder, seq[q - 1], seq[q])
    return builder.freeze()


def refine_theta(
    theta: TransitionMatrix,
    eta_star: StateDistribution,
    catalog: ContentCatalog,
    limits=None,
) -> TransitionMatrix:
    """Link every remaining neighbor pair, visiting states in eta* order."""
    builder = ChainBuilder.from_matrix(theta, eta_star, catalog, limits)
    graph = SupportGraph(theta.space, eta_star)
    added = 0
    for m in graph.order:
        m = int(m)
        for mp in graph.adj[m]:
            if graph.position[mp] > graph.position[m] and builder.get(mp, m) == 0:
                if basic_update(builder, m, mp) > 0:
                    added += 1
    log.debug("refine_theta: %d links added", added)
    return builder.freeze()


# --- Replacement probabilities ---


@dataclass(frozen=True)
class ReplacementPolicy:
    """tau per source state and requested content: candidate destinations and their probabilities."""
    space: _Space
    states: np.ndarray
    moves: dict[int, dict[int, tuple[np.ndarray, np.ndarray]]]

    def tau(self, dest: int, src: int) -> float:
        k = self.space.linking_content(dest, src)
        dests, probs = self.moves.get(src, {}).get(k, (np.empty(0, int), np.empty(0)))
        hit = np.flatnonzero(dests == dest)
        return float(probs[hit[0]]) if hit.size else 0.0

    def residual(self, src: int, k: int) -> float:
        _, probs = self.moves.get(src, {}).get(k, (None, np.empty(0)))
        return float(min(1.0, max(0.0, 1.0 - probs.sum())))

    def to_triplets(self) -> dict:
        rows, cols, vals = [], [], []
        for src in sorted(self.moves):
            for k in sorted(self.moves[src]):
                dests, probs = self.moves[src][k]
                for d, t in zip(dests, probs):
                    rows.append(int(d))
                    cols.append(int(src))
                    vals.append(float(t))
        return {
            "rows": rows,
            "cols": cols,
            "values": vals,
            "states": [list(self.space.contents(int(s))) for s in self.states],
        }

    @classmethod
    def from_triplets(cls, space: _Space, doc: dict) -> "ReplacementPolicy":
        """Rebuild from to_triplets() output; the listed states must match `space`."""
        states = np.array([space.index_of(s) for s in doc["states"]], dtype=int)
        grouped: dict[int, dict[int, list[tuple[int, float]]]] = {}
        for dest, src, t in zip(doc["rows"], doc["cols"], doc["values"]):
            k = space.linking_content(dest, src)
            grouped.setdefault(src, {}).setdefault(k, []).append((dest, t))
        moves = {
            src: {
                k: (np.array([d for d, _ in sorted(pairs)], dtype=int), np.array([t for _, t in sorted(pairs)]))
                for k, pairs in by_k.items()
            }
            for src, by_k in grouped.items()
        }
        return cls(space, np.sort(states), moves)


def derive_tau(theta: TransitionMatrix, catalog: ContentCatalog) -> ReplacementPolicy:
    space = theta.space
    coo = theta.matrix.tocoo()
    grouped: dict[int, dict[int, list[tuple[int, float]]]] = {}
    for i, j, v in zip(coo.row, coo.col, coo.data):
        if i == j or v == 0:
            continue
        src, dest = int(theta.states[j]), int(theta.states[i])
        k = space.linking_content(dest, src)
        phi_k = catalog.phi(k)
        if phi_k <= 0:
            raise InconsistentPolicy(f"Transition {src}->{dest} needs content {k}, which is never requested")
        grouped.setdefault(src, {}).setdefault(k, []).append((dest, float(v) / phi_k))

    moves = {}
    for src, by_content in grouped.items():
        moves[src] = {}
        for k, pairs in by_content.items():
            pairs.sort()
            dests = np.array([d for d, _ in pairs], dtype=int)
            probs = np.array([t for _, t in pairs])
            total = probs.sum()
            if 1.0 < total <= 1.0 + settings.SNAP_TOL:
                probs /= total
            moves[src][k] = (dests, probs)
    return ReplacementPolicy(space, theta.states.copy(), moves)


# --- Verification ---


def steady_state(theta: TransitionMatrix) -> np.ndarray:
    """Solve (Theta - I) x = 0 with sum(x) = 1."""
    n = theta.n
    if n == 1:
        return np.ones(1)
    A = (theta.matrix - sparse.identity(n, format="csc")).tolil()
    A[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[-1] = 1.0
    return np.asarray(spsolve(A.tocsc(), b)).ravel()


def chain_period(theta: TransitionMatrix) -> int:
    """Period of the chain restricted to states reachable from the first one."""
    adj = (theta.matrix.T != 0).astype(int).tocsr()  # adj[u, v] = 1 when u -> v
    order, _ = breadth_first_order(adj, 0, directed=True)
    level = np.full(theta.n, -1)
    level[0] = 0
    for u in order:
        for v in adj.indices[adj.indptr[u]:adj.indptr[u + 1]]:
            if level[v] < 0:
                level[v] = level[u] + 1
    g = 0
    coo = adj.tocoo()
    for u, v in zip(coo.row, coo.col):
        if level[u] >= 0 and level[v] >= 0:
            g = math.gcd(g, int(level[u] + 1 - level[v]))
    return g if g > 0 else 1


def power_iterate(theta: TransitionMatrix, x0: np.ndarray, max_iter: int, tol: float = 1e-15) -> tuple[np.ndarray, int, bool]:
    x = np.asarray(x0, dtype=float)
    for t in range(1, max_iter + 1):
        nxt = theta.apply(x)
        if np.abs(nxt - x).sum() < tol:
            return nxt, t, True
        x = nxt
    return x, max_iter, False


@dataclass
class ChainReport:
    checks: dict[str, bool]
    details: dict[str, float | int | str | None] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": self.checks, "details": self.details}


def diagonal_identity_residual(theta: TransitionMatrix, policy: ReplacementPolicy, catalog: ContentCatalog) -> float:
    """Largest gap between Theta's diagonal and sum_{k in G} phi_k + sum_{k not in G} phi_k (1 - sum tau)."""
    diag = theta.matrix.diagonal()
    worst = 0.0
    for j, m in enumerate(theta.states):
        m = int(m)
        cached = set(theta.space.contents(m))
        alpha = sum(catalog.phi(k) for k in cached)
        moves = policy.moves.get(m, {})
        alpha += sum(
            catalog.phi(k) * (1.0 - (moves[k][1].sum() if k in moves else 0.0))
            for k in range(1, catalog.n_contents + 1) if k not in cached
        )
        worst = max(worst, abs(alpha - diag[j]))
    return worst


def verify_chain(
    theta: TransitionMatrix,
    eta_star: StateDistribution,
    catalog: ContentCatalog,
    max_iter: int = 200_000,
) -> ChainReport:
    """Stochasticity, tau bounds, fixed point, ergodicity and convergence to eta*."""
    checks: dict[str, bool] = {}
    details: dict = {}
    eta = eta_star.probs[theta.states]
    data = theta.matrix.data

    col_err = float(np.max(np.abs(theta.column_sums() - 1.0)))
    checks["stochastic"] = bool(np.all(data >= -settings.SNAP_TOL) and np.all(data <= 1 + settings.SNAP_TOL)
                                and col_err <= settings.SIMPLEX_TOL)
    details["column_sum_error"] = col_err

    try:
        policy = derive_tau(theta, catalog)
        taus = [t for by_k in policy.moves.values() for _, probs in by_k.values() for t in probs]
        sums = [probs.sum() for by_k in policy.moves.values() for _, probs in by_k.values()]
        tau_ok = all(-settings.SNAP_TOL <= t <= 1 + settings.SIMPLEX_TOL for t in taus)
        tau_ok = tau_ok and all(s <= 1 + settings.SIMPLEX_TOL for s in sums)
        checks["tau_bounds"] = tau_ok
        details["max_tau"] = float(max(taus, default=0.0))
        details["diagonal_identity_residual"] = diagonal_identity_residual(theta, policy, catalog)
    except Exception as e:  # neighbor or popularity inconsistencies
        checks["tau_bounds"] = False
        details["tau_error"] = str(e)

    fixed = float(np.max(np.abs(theta.apply(eta) - eta)))
    checks["fixed_point"] = fixed <= settings.SIMPLEX_TOL
    details["fixed_point_error"] = fixed

    n_comp, _ = connected_components(theta.matrix, directed=True, connection="strong")
    period = chain_period(theta)
    checks["irreducible_aperiodic"] = n_comp == 1 and period == 1
    details["strong_components"] = int(n_comp)
    details["period"] = int(period)

    budget = max(1, min(max_iter, int(5e7 // max(theta.matrix.nnz, 1))))
    limit, iters, converged = power_iterate(theta, np.full(theta.n, 1.0 / theta.n), budget)
    method = "power_iteration"
    if not converged:
        limit = steady_state(theta)
        method = "direct_solve"
    tv = float(0.5 * np.abs(limit - eta).sum()) if np.all(np.isfinite(limit)) else float("inf")
    checks["converges_to_target"] = tv <= settings.RESIDUAL_TOL
    details["steady_state_tv"] = tv
    details["steady_state_method"] = method
    details["power_iterations"] = int(iters)
    if theta.n <= settings.DENSE_LIMIT:
        details["dense_oracle_tv"] = float(0.5 * np.abs(dense_steady_state(theta) - eta).sum())
    return ChainReport(checks, details)


def dense_steady_state(theta: TransitionMatrix) -> np.ndarray:
    """Eigenvector of the dense Theta for the eigenvalue closest to 1, normalized."""
    w, v = np.linalg.eig(theta.dense())
    x = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    return x / x.sum()


# --- Conditional matrices and time-varying popularity ---


@dataclass(frozen=True)
class ConditionalTransitionMatrix:
    content: int
    matrix: sparse.csc_array


def conditional_matrices(policy: ReplacementPolicy, n_contents: int) -> list[ConditionalTransitionMatrix]:
    """Theta_k for k = 1..N_f: the chain's moves given content k is requested."""
    space = policy.space
    local = {int(m): i for i, m in enumerate(policy.states)}
    n = policy.states.size
    out = []
    for k in range(1, n_contents + 1):
        rows, cols, vals = [], [], []
        for j, m in enumerate(policy.states):
            m = int(m)
            stay = 1.0
            if k not in space.contents(m) and k in policy.moves.get(m, {}):
                dests, probs = policy.moves[m][k]
                for d, t in zip(dests, probs):
                    rows.append(local[int(d)])
                    cols.append(j)
                    vals.append(t)
                stay = 1.0 - probs.sum()
            rows.append(j)
            cols.append(j)
            vals.append(stay)
        out.append(ConditionalTransitionMatrix(k, sparse.csc_array((vals, (rows, cols)), shape=(n, n))))
    return out


def combine(conditionals: list[ConditionalTransitionMatrix], popularity: np.ndarray) -> sparse.csc_array:
    """sum_k phi_k Theta_k."""
    total = None
    for cond in conditionals:
        w = float(popularity[cond.content - 1])
        if w == 0:
            continue
        term = cond.matrix * w
        total = term if total is None else total + term
    return total


def average_theta(
    conditionals: list[ConditionalTransitionMatrix],
    popularity_sequence: np.ndarray,
    space: _Space,
    states: np.ndarray,
    weights: np.ndarray | None = None,
) -> TransitionMatrix:
    """Theta averaged over a sequence of instantaneous popularity vectors."""
    seq = np.atleast_2d(np.asarray(popularity_sequence, dtype=float))
    w = np.ones(seq.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    total = None
    for wq, phi_q in zip(w, seq):
        term = combine(conditionals, phi_q) * wq
        total = term if total is None else total + term
    return TransitionMatrix(space, np.asarray(states, dtype=int), sparse.csc_array(total))


# --- Mixing ---


def eigen_summary(theta: TransitionMatrix) -> tuple[float | None, float | None]:
    """(SLEM, second largest real eigenvalue) from a dense eigen-solve."""
    if theta.n <= 1:
        return None, None
    ev = np.linalg.eigvals(theta.dense())
    rest = np.delete(ev, np.argmin(np.abs(ev - 1.0)))
    return float(np.max(np.abs(rest))), float(np.max(rest.real))


def iterations_to_threshold(
    theta: TransitionMatrix,
    eta: np.ndarray,
    starts: np.ndarray,
    threshold: float,
    t_max: int,
) -> np.ndarray:
    """First t with ||Theta^t x0 - eta||_2 < threshold for each column x0 of starts; -1 if never."""
    X = np.array(starts, dtype=float, copy=True)
    out = np.full(X.shape[1], -1)
    dist = np.linalg.norm(X - eta[:, None], axis=0)
    out[dist < threshold] = 0
    for t in range(1, t_max + 1):
        if np.all(out >= 0):
            break
        X = theta.matrix @ X
        dist = np.linalg.norm(X - eta[:, None], axis=0)
        newly = (out < 0) & (dist < threshold)
        out[newly] = t
    return out


@dataclass
class MixingReport:
    slem: float | None
    lambda2: float | None
    iterations: np.ndarray
    threshold: float

    @property
    def converged(self) -> np.ndarray:
        return self.iterations >= 0

    @property
    def median_iterations(self) -> float:
        done = self.iterations[self.converged]
        return float(np.median(done)) if done.size else float("nan")

    def histogram(self) -> dict[int, int]:
        values, counts = np.unique(self.iterations, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def to_dict(self) -> dict:
        done = self.iterations[self.converged]
        return {
            "slem": self.slem,
            "lambda2": self.lambda2,
            "threshold": self.threshold,
            "n_trials": int(self.iterations.size),
            "n_converged": int(done.size),
            "median_iterations": self.median_iterations,
            "mean_iterations": float(done.mean()) if done.size else None,
            "max_iterations": int(done.max()) if done.size else None,
            "histogram": self.histogram(),
        }


def mixing_report(
    theta: TransitionMatrix,
    eta_star: StateDistribution,
    n_trials: int,
    threshold: float,
    seed: int,
    t_max: int = 100_000,
) -> MixingReport:
    """SLEM plus iterations-to-threshold over random initial distributions (uniform on the simplex)."""
    slem = lambda2 = None
    if theta.n <= settings.DENSE_LIMIT:
        slem, lambda2 = eigen_summary(theta)
    eta = eta_star.probs[theta.states]
    rng = np.random.default_rng(seed)
    starts = rng.dirichlet(np.ones(theta.n), size=n_trials).T if theta.n > 1 else np.ones((1, n_trials))
    iters = iterations_to_threshold(theta, eta, starts, threshold, t_max)
    return MixingReport(slem, lambda2, iters, threshold)


# --- One-call compilation ---


@dataclass(frozen=True)
class CompiledPolicy:
    decomposition: SequenceDecomposition
    theta_basic: TransitionMatrix
    theta: TransitionMatrix
    policy: ReplacementPolicy


def compile_policy(
    space: _Space,
    eta_star: StateDistribution,
    catalog: ContentCatalog,
    limits=None,
    refine: bool = True,
) -> CompiledPolicy:
    decomposition = build_sequences(eta_star, space)
    basic = generate_theta(eta_star, catalog, space, decomposition, limits)
    theta = refine_theta(basic, eta_star, catalog, limits) if refine else basic
    return CompiledPolicy(decomposition, basic, theta, derive_tau(theta, catalog))
