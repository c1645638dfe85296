"""
Trace-driven cache simulation: the compiled replacement chain, a static
placement, LRU and LFU, plus distribution-evolution analysis of Theta.
"""
import logging
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats
from tqdm import tqdm

from cachechain import settings
from cachechain.errors import ConfigError
from cachechain.placement import StateDistribution, sample_state
from cachechain.policy import ReplacementPolicy, TransitionMatrix
from cachechain.state_space import State, _Space
from cachechain.workload import RequestTrace

log = logging.getLogger(__name__)

KINDS = ("proposed", "static", "lru", "lfu")


# --- Policies ---


class CachePolicy:
    """A cache of fixed size c; access() serves one request and reports (hit, replaced)."""
    kind = ""

    def state(self) -> State:
        raise NotImplementedError

    def access(self, k: int, rng: np.random.Generator) -> tuple[bool, bool]:
        raise NotImplementedError


class ProposedPolicy(CachePolicy):
    """On a miss for k in state m, move to m' in H_m^k with probability tau, else keep m."""
    kind = "proposed"

    def __init__(self, policy: ReplacementPolicy, initial: int):
        self.space = policy.space
        self.m = int(initial)
        self._cached = set(self.space.contents(self.m))
        self._moves = {
            (src, k): (dests.tolist(), np.cumsum(probs).tolist())
            for src, by_k in policy.moves.items()
            for k, (dests, probs) in by_k.items()
        }
        self.uncacheable = 0
        self._active = set(getattr(self.space, "active_contents", range(1, self.space.n_contents + 1)))

    def state(self) -> State:
        return self.space.contents(self.m)

    def access(self, k, rng):
        if k in self._cached:
            return True, False
        if k not in self._active:
            self.uncacheable += 1
            return False, False
        move = self._moves.get((self.m, k))
        if move is None:
            return False, False
        dests, cum = move
        u = rng.random()
        for d, c in zip(dests, cum):
            if u < c:
                self.m = d
                self._cached = set(self.space.contents(d))
                return False, True
        return False, False


class StaticPolicy(CachePolicy):
    kind = "static"

    def __init__(self, contents: State):
        self._state = tuple(sorted(contents))
        self._cached = set(self._state)

    def state(self):
        return self._state

    def access(self, k, rng):
        return k in self._cached, False


class LRUPolicy(CachePolicy):
    kind = "lru"

    def __init__(self, contents: State):
        self.capacity = len(contents)
        self.od = OrderedDict((k, None) for k in contents)

    def state(self):
        return tuple(sorted(self.od))

    def access(self, k, rng):
        if k in self.od:
            self.od.move_to_end(k, last=True)
            return True, False
        self.od.popitem(last=False)
        self.od[k] = None
        return False, True


class LFUPolicy(CachePolicy):
    """Evicts the least frequently requested content, least recent first among ties. Counters never reset."""
    kind = "lfu"

    def __init__(self, contents: State):
        self.capacity = len(contents)
        self.key2freq = {k: 0 for k in contents}
        self.freq2od = defaultdict(OrderedDict)
        for k in contents:
            self.freq2od[0][k] = None
        self.min_freq = 0
        self.seen = defaultdict(int)

    def state(self):
        return tuple(sorted(self.key2freq))

    def _touch(self, k: int, old_f: int) -> None:
        od = self.freq2od[old_f]
        od.pop(k, None)
        if not od:
            del self.freq2od[old_f]
            if self.min_freq == old_f:
                self.min_freq = old_f + 1
        self.freq2od[old_f + 1][k] = None
        self.key2freq[k] = old_f + 1

    def access(self, k, rng):
        self.seen[k] += 1
        if k in self.key2freq:
            self._touch(k, self.key2freq[k])
            return True, False
        od = self.freq2od[self.min_freq]
        evict, _ = od.popitem(last=False)
        if not od:
            del self.freq2od[self.min_freq]
        del self.key2freq[evict]
        f = self.seen[k]
        self.key2freq[k] = f
        self.freq2od[f][k] = None
        self.min_freq = min(self.freq2od)
        return False, True


@dataclass(frozen=True)
class PolicyInstance:
    """Recipe for one policy in a comparison; build() draws its initial state."""
    kind: str
    space: _Space | None = None
    eta_star: StateDistribution | None = None
    policy: ReplacementPolicy | None = None
    initial: State | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"Unknown policy kind {self.kind!r}; pick one of {KINDS}")
        if self.kind == "proposed" and (self.policy is None or self.eta_star is None):
            raise ConfigError("The proposed policy needs a replacement policy and eta*")
        if self.initial is None and (self.eta_star is None or self.space is None):
            raise ConfigError(f"{self.kind}: give an initial state or eta* with its space")

    def initial_state(self, rng: np.random.Generator) -> int | State:
        if self.initial is not None:
            return self.initial
        return sample_state(self.eta_star, rng.random())

    def build(self, rng: np.random.Generator) -> CachePolicy:
        start = self.initial_state(rng)
        if self.kind == "proposed":
            m = start if isinstance(start, (int, np.integer)) else self.space.index_of(start)
            return ProposedPolicy(self.policy, int(m))
        contents = self.space.contents(int(start)) if isinstance(start, (int, np.integer)) else start
        return {"static": StaticPolicy, "lru": LRUPolicy, "lfu": LFUPolicy}[self.kind](tuple(contents))


# --- Single run ---


@dataclass
class SimulationResult:
    kind: str
    hits: int
    misses: int
    replacements: int
    uncacheable: int
    window_hits: np.ndarray
    window_requests: np.ndarray
    states: np.ndarray | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_requests(self) -> int:
        return self.hits + self.misses

    @property
    def hit_ratio(self) -> float:
        return self.hits / self.n_requests if self.n_requests else 0.0

    @property
    def window_hit_ratio(self) -> np.ndarray:
        return np.divide(self.window_hits, self.window_requests,
                         out=np.zeros(self.window_hits.size), where=self.window_requests > 0)

    def summary(self) -> dict:
        return {
            "policy": self.kind,
            "n_requests": self.n_requests,
            "hits": self.hits,
            "misses": self.misses,
            "replacements": self.replacements,
            "uncacheable": self.uncacheable,
            "hit_ratio": self.hit_ratio,
        }


def _windows(trace: RequestTrace, window: int | None) -> np.ndarray:
    if trace.session_ids is not None and window is None:
        return np.asarray(trace.session_ids)
    if window is None:
        return np.zeros(trace.n_requests, dtype=int)
    return np.arange(trace.n_requests) // window


def run(
    policy: CachePolicy,
    trace: RequestTrace,
    seed: int,
    window: int | None = None,
    record_states: bool = False,
    space: _Space | None = None,
) -> SimulationResult:
    """
    Serve the trace in order. Misses always download the content; replacements
    count the misses after which the cached set changed.

    With record_states, the space index of the cache state after every request
    is kept (-1 when the state is outside `space`).
    """
    rng = np.random.default_rng(seed)
    buckets = _windows(trace, window)
    n_windows = int(buckets.max()) + 1 if buckets.size else 0
    window_hits = np.zeros(n_windows, dtype=np.int64)
    window_requests = np.bincount(buckets, minlength=n_windows).astype(np.int64)

    if record_states:
        space = space or getattr(policy, "space", None)
        if space is None:
            raise ConfigError("record_states needs the state space")
        states = np.empty(trace.n_requests, dtype=np.int64)
        current = space.find(policy.state())
        current = -1 if current is None else current

    hits = replacements = 0
    for i, k in enumerate(trace.contents.tolist()):
        hit, replaced = policy.access(k, rng)
        if hit:
            hits += 1
            window_hits[buckets[i]] += 1
        elif replaced:
            replacements += 1
            if record_states:
                found = space.find(policy.state())
                current = -1 if found is None else found
        if record_states:
            states[i] = current

    return SimulationResult(
        kind=policy.kind,
        hits=hits,
        misses=trace.n_requests - hits,
        replacements=replacements,
        uncacheable=getattr(policy, "uncacheable", 0),
        window_hits=window_hits,
        window_requests=window_requests,
        states=states if record_states else None,
        seed=seed,
    )


# --- Distribution analysis ---


@dataclass
class EvolutionResult:
    iterations: int
    distances: np.ndarray
    converged: bool


def distribution_evolution(
    theta: TransitionMatrix,
    eta_star: StateDistribution,
    eta0,
    t_max: int,
    threshold: float,
) -> EvolutionResult:
    """||Theta^t eta0 - eta*||_2 for t = 0..t_max, stopping at the first t below threshold."""
    target = eta_star.probs[theta.states]
    x = np.asarray(eta0.probs if isinstance(eta0, StateDistribution) else eta0, dtype=float)
    if x.size == theta.space.n_states and x.size != theta.n:
        if abs(x[theta.states].sum() - 1.0) > settings.RESIDUAL_TOL:
            raise ConfigError("Initial distribution puts mass outside the chain's states")
        x = x[theta.states]
    if x.size != theta.n:
        raise ConfigError(f"Initial distribution has {x.size} entries, chain has {theta.n} states")

    distances = [float(np.linalg.norm(x - target))]
    t = 0
    while distances[-1] >= threshold and t < t_max:
        x = theta.apply(x)
        t += 1
        distances.append(float(np.linalg.norm(x - target)))
    converged = distances[-1] < threshold
    return EvolutionResult(t if converged else -1, np.array(distances), converged)


def empirical_state_distribution(result: SimulationResult, window: int, n_states: int) -> StateDistribution:
    """
    Occupancy over the trailing `window` requests. States outside the space are
    not represented, so the entries then sum to less than one.
    """
    if result.states is None:
        raise ConfigError("Run the simulation with record_states=True")
    if not 0 < window <= result.states.size:
        raise ConfigError(f"Window {window} does not fit a run of {result.states.size} requests")
    tail = result.states[-window:]
    counts = np.bincount(tail[tail >= 0], minlength=n_states)
    return StateDistribution.unchecked(counts / window)


def distance_checkpoints(
    result: SimulationResult,
    eta_star: StateDistribution,
    window: int,
    every: int,
) -> pd.DataFrame:
    """Squared distance between the trailing-window occupancy and eta* every `every` requests."""
    if result.states is None:
        raise ConfigError("Run the simulation with record_states=True")
    rows = []
    n = eta_star.n_states
    for t in range(window, result.states.size + 1, every):
        tail = result.states[t - window:t]
        counts = np.bincount(tail[tail >= 0], minlength=n) / window
        rows.append({"request": t, "sq_distance": float(np.sum((counts - eta_star.probs) ** 2))})
    return pd.DataFrame(rows, columns=["request", "sq_distance"])


# --- Batches ---


TraceSource = RequestTrace | Callable[[int], RequestTrace]


def _one_run(policies: dict[str, PolicyInstance], traces: TraceSource, ss: np.random.SeedSequence, run_id: int) -> list[dict]:
    trace_ss, policy_ss = ss.spawn(2)
    trace = traces if isinstance(traces, RequestTrace) else traces(int(trace_ss.generate_state(1)[0]))
    policy_seed = int(policy_ss.generate_state(1)[0])
    rows = []
    for name, plan in policies.items():
        rng = np.random.default_rng(policy_seed)
        result = run(plan.build(rng), trace, seed=policy_seed + 1)
        rows.append({"run": run_id, "name": name, **result.summary()})
    return rows


def _ci(values: pd.Series, level: float) -> float:
    n = values.size
    if n < 2:
        return 0.0
    return float(stats.t.ppf(0.5 + level / 2, n - 1) * values.std(ddof=1) / np.sqrt(n))


@dataclass
class Comparison:
    runs: pd.DataFrame
    summary: pd.DataFrame


def compare(
    policies: dict[str, PolicyInstance],
    traces: TraceSource,
    n_runs: int,
    seed: int,
    n_jobs: int | None = None,
    level: float = 0.95,
    progress: bool = False,
) -> Comparison:
    """
    Mean and t-interval half-width of hit ratio and replacements per policy over
    n_runs runs. Run r uses the r-th child of SeedSequence(seed), shared by all
    policies in that run; results are merged in run order.
    """
    if n_runs < 1:
        raise ConfigError("compare needs at least one run")
    children = np.random.SeedSequence(seed).spawn(n_runs)
    jobs = (delayed(_one_run)(policies, traces, ss, r) for r, ss in enumerate(children))
    batches = Parallel(n_jobs=n_jobs or settings.N_JOBS)(
        tqdm(jobs, total=n_runs, desc="runs", disable=not progress)
    )
    runs = pd.DataFrame([row for batch in batches for row in batch])

    rows = []
    for name in policies:
        sub = runs[runs["name"] == name]
        rows.append({
            "name": name,
            "policy": sub["policy"].iloc[0] if len(sub) else policies[name].kind,
            "n_runs": int(len(sub)),
            "hit_ratio_mean": float(sub["hit_ratio"].mean()) if len(sub) else 0.0,
            "hit_ratio_ci": _ci(sub["hit_ratio"], level),
            "replacements_mean": float(sub["replacements"].mean()) if len(sub) else 0.0,
            "replacements_ci": _ci(sub["replacements"].astype(float), level),
        })
    return Comparison(runs, pd.DataFrame(rows))


def sweep(
    values,
    setup: Callable[[object], tuple[dict[str, PolicyInstance], TraceSource]],
    n_runs: int,
    seed: int,
    parameter: str = "value",
    n_jobs: int | None = None,
    progress: bool = False,
) -> pd.DataFrame:
    """compare() at every grid value; setup(value) returns the policies and trace source."""
    tables = []
    for i, value in enumerate(tqdm(list(values), desc=parameter, disable=not progress)):
        policies, traces = setup(value)
        table = compare(policies, traces, n_runs, seed + i, n_jobs=n_jobs).summary
        table.insert(0, parameter, value)
        tables.append(table)
    return pd.concat(tables, ignore_index=True)
