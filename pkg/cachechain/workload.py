"""
Request trace generators: static Zipf, session-varying popularity and the
shot-noise model. Every generator is a pure function of its config and seed.
Timestamps are fractional minutes.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from cachechain import settings
from cachechain.artifacts import write_csv
from cachechain.errors import ConfigError
from cachechain.state_space import ContentCatalog

log = logging.getLogger(__name__)

DEFAULT_HORIZON = 100.0
MODES = ("random", "smooth")


@dataclass(frozen=True)
class RequestTrace:
    timestamps: np.ndarray
    contents: np.ndarray
    horizon: float
    n_contents: int
    session_ids: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64)
        k = np.asarray(self.contents, dtype=np.int64)
        if t.shape != k.shape or t.ndim != 1:
            raise ConfigError("Trace timestamps and contents must be equal-length vectors")
        if t.size and np.any(np.diff(t) < 0):
            raise ConfigError("Trace timestamps must be non-decreasing")
        if k.size and (k.min() < 1 or k.max() > self.n_contents):
            raise ConfigError(f"Trace references contents outside [1, {self.n_contents}]")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "contents", k)

    @property
    def n_requests(self) -> int:
        return int(self.contents.size)

    @property
    def n_sessions(self) -> int:
        if self.session_ids is None or self.session_ids.size == 0:
            return 1
        return int(self.session_ids.max()) + 1


def zipf_pmf(n_contents: int, s: float) -> np.ndarray:
    if s < 0:
        raise ConfigError(f"Zipf exponent must be non-negative, got {s}")
    log_w = -s * np.log(np.arange(1, n_contents + 1, dtype=float))
    w = np.exp(log_w - log_w.max())
    return w / w.sum()


def _draw(rng: np.random.Generator, pmf: np.ndarray, size: int) -> np.ndarray:
    if size == 0:
        return np.empty(0, dtype=np.int64)
    return rng.choice(pmf.size, size=size, p=pmf) + 1


def _even_times(n_requests: int, horizon: float) -> np.ndarray:
    return np.arange(n_requests, dtype=np.float64) * (horizon / max(n_requests, 1))


def gen_static_zipf(
    n_contents: int,
    s: float,
    n_requests: int,
    seed: int,
    horizon: float = DEFAULT_HORIZON,
) -> RequestTrace:
    """i.i.d. requests with Pr{k} proportional to k^-s, evenly spaced over the horizon."""
    rng = np.random.default_rng(seed)
    contents = _draw(rng, zipf_pmf(n_contents, s), n_requests)
    return RequestTrace(_even_times(n_requests, horizon), contents, horizon, n_contents)


# --- Sessions ---


@dataclass(frozen=True)
class SessionSchedule:
    """Per-session popularity vectors whose mean over sessions is avg_popularity."""
    avg_popularity: np.ndarray
    popularity: np.ndarray
    mode: str

    def __post_init__(self):
        avg = np.asarray(self.avg_popularity, dtype=float)
        pop = np.atleast_2d(np.asarray(self.popularity, dtype=float))
        if self.mode not in MODES:
            raise ConfigError(f"Unknown variation mode {self.mode!r}; pick one of {MODES}")
        if pop.shape[1] != avg.size:
            raise ConfigError("Session popularity vectors do not match the catalog size")
        if np.any(pop < 0) or np.any(np.abs(pop.sum(axis=1) - 1.0) > settings.RESIDUAL_TOL):
            raise ConfigError("Every session popularity must be a probability vector")
        gap = np.max(np.abs(pop.mean(axis=0) - avg))
        if gap > settings.RESIDUAL_TOL:
            raise ConfigError(f"Session popularity averages to within {gap:.2e} of the target, not 1e-9")
        object.__setattr__(self, "avg_popularity", avg)
        object.__setattr__(self, "popularity", pop)

    @property
    def n_sessions(self) -> int:
        return int(self.popularity.shape[0])

    @property
    def n_contents(self) -> int:
        return int(self.avg_popularity.size)

    def total_variation_steps(self) -> np.ndarray:
        """TV distance between each pair of consecutive sessions."""
        return 0.5 * np.abs(np.diff(self.popularity, axis=0)).sum(axis=1)

    @classmethod
    def random_fluctuation(cls, avg_popularity, n_sessions: int, concentration: float, seed: int) -> "SessionSchedule":
        """
        Dirichlet jitter around the average, re-centred so the session mean is exact.
        Deviations are scaled down uniformly when a session would go negative.
        """
        avg = np.asarray(avg_popularity, dtype=float)
        if concentration <= 0:
            raise ConfigError("Dirichlet concentration must be positive")
        if n_sessions < 1:
            raise ConfigError("Need at least one session")
        rng = np.random.default_rng(seed)
        alpha = np.maximum(concentration * avg.size * avg, 1e-12)
        draws = rng.dirichlet(alpha, size=n_sessions)
        dev = draws - draws.mean(axis=0)
        neg = dev < 0
        scale = 1.0
        if neg.any():
            scale = min(1.0, float(np.min(np.broadcast_to(avg, dev.shape)[neg] / -dev[neg])))
        pop = np.clip(avg + scale * dev, 0.0, None)
        pop /= pop.sum(axis=1, keepdims=True)
        return cls(avg, pop, "random")

    @classmethod
    def smooth_change(cls, avg_popularity, n_sessions: int, amplitude: float) -> "SessionSchedule":
        """
        A cosine popularity bump rotating once around the catalog over the sessions:
        phi_q,k = avg_k + a * min(avg) * cos(2 pi (k - q N_f / Q) / N_f).
        The consecutive-session TV distance is at most a * min(avg) * N_f * sin(pi / Q).
        """
        avg = np.asarray(avg_popularity, dtype=float)
        if not 0 <= amplitude <= 1:
            raise ConfigError("Amplitude must lie in [0, 1]")
        if n_sessions < 1:
            raise ConfigError("Need at least one session")
        n = avg.size
        if n_sessions == 1 or n == 1:
            return cls(avg, np.tile(avg, (n_sessions, 1)), "smooth")
        k = np.arange(1, n + 1)
        shift = np.arange(n_sessions)[:, None] * n / n_sessions
        pop = avg + amplitude * avg.min() * np.cos(2 * np.pi * (k - shift) / n)
        return cls(avg, pop, "smooth")

    def step_bound(self, amplitude: float) -> float:
        """Upper bound on consecutive-session TV distance for a smooth schedule."""
        return amplitude * self.avg_popularity.min() * self.n_contents * np.sin(np.pi / self.n_sessions)


def session_sizes(n_requests: int, n_sessions: int) -> np.ndarray:
    edges = (np.arange(n_sessions + 1) * n_requests) // n_sessions
    return np.diff(edges)


def gen_session_varying(
    schedule: SessionSchedule,
    n_requests: int,
    seed: int,
    horizon: float = DEFAULT_HORIZON,
) -> RequestTrace:
    """Requests split evenly across sessions, drawn i.i.d. from each session's popularity."""
    rng = np.random.default_rng(seed)
    sizes = session_sizes(n_requests, schedule.n_sessions)
    parts = [_draw(rng, phi_q, int(size)) for phi_q, size in zip(schedule.popularity, sizes)]
    contents = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    session_ids = np.repeat(np.arange(schedule.n_sessions), sizes)
    return RequestTrace(_even_times(n_requests, horizon), contents, horizon, schedule.n_contents, session_ids)


# --- Shot noise ---


@dataclass(frozen=True)
class ShotNoiseConfig:
    """
    Each content k receives a pulse of requests starting at t0 ~ U[arrival_window]
    with rate A exp(-(t - t0) / (decay_ratio * L_k)) on [t0, t0 + L_k], where the
    lifetime L_k ~ mean_lifetime * U[1 - lifetime_spread, 1 + lifetime_spread] and
    A makes the expected count equal total_requests * Zipf_s(k).
    """
    zipf_s: float = 0.8
    total_requests: float = 100_000.0
    arrival_window: tuple[float, float] = (0.0, 40.0)
    horizon: float = DEFAULT_HORIZON
    mean_lifetime: float = 32.7
    lifetime_spread: float = 0.5
    decay_ratio: float = 0.5

    def __post_init__(self):
        lo, hi = self.arrival_window
        if not 0 <= lo <= hi <= self.horizon:
            raise ConfigError("Arrival window must lie inside the horizon")
        if self.mean_lifetime <= 0 or not 0 <= self.lifetime_spread < 1:
            raise ConfigError("Lifetimes must be positive")
        if self.decay_ratio <= 0 or self.total_requests < 0 or self.zipf_s < 0:
            raise ConfigError("Invalid shot-noise parameters")


def gen_shot_noise(config: ShotNoiseConfig, n_contents: int, seed: int) -> RequestTrace:
    """Superpose one decaying pulse per content, sampled by thinning a homogeneous process."""
    rng = np.random.default_rng(seed)
    means = config.total_requests * zipf_pmf(n_contents, config.zipf_s)
    lo, hi = config.arrival_window
    t0 = rng.uniform(lo, hi, size=n_contents)
    life = config.mean_lifetime * rng.uniform(1 - config.lifetime_spread, 1 + config.lifetime_spread, size=n_contents)
    decay = config.decay_ratio * life
    peak = means / (decay * -np.expm1(-life / decay))

    n_dom = rng.poisson(peak * life)
    owner = np.repeat(np.arange(n_contents), n_dom)
    offsets = rng.random(owner.size) * life[owner]
    keep = rng.random(owner.size) < np.exp(-offsets / decay[owner])
    times = t0[owner][keep] + offsets[keep]
    contents = owner[keep] + 1

    order = np.lexsort((contents, times))
    log.debug("gen_shot_noise: %d events from %d dominating draws", order.size, owner.size)
    return RequestTrace(times[order], contents[order], config.horizon, n_contents)


def lifetimes(trace: RequestTrace) -> np.ndarray:
    """Span between first and last request of every content (nan when never requested)."""
    out = np.full(trace.n_contents, np.nan)
    if trace.n_requests == 0:
        return out
    df = pd.DataFrame({"k": trace.contents, "t": trace.timestamps})
    span = df.groupby("k")["t"].agg(lambda t: t.max() - t.min())
    out[span.index.to_numpy() - 1] = span.to_numpy()
    return out


# --- Measurement and I/O ---


def empirical_popularity(trace: RequestTrace, window: tuple[float, float] | None = None) -> np.ndarray:
    """Normalized request counts over [start, end) of the window (whole trace by default)."""
    mask = np.ones(trace.n_requests, dtype=bool)
    if window is not None:
        start, end = window
        if start < 0 or end > trace.horizon or start >= end:
            raise ConfigError(f"Window {window} is not inside [0, {trace.horizon}]")
        mask = (trace.timestamps >= start) & (trace.timestamps < end)
    counts = np.bincount(trace.contents[mask], minlength=trace.n_contents + 1)[1:]
    return ContentCatalog.from_counts(counts).avg_popularity


def session_popularity(trace: RequestTrace) -> np.ndarray:
    """Empirical popularity per session, one row each."""
    if trace.session_ids is None:
        return empirical_popularity(trace)[None, :]
    rows = []
    for q in range(trace.n_sessions):
        counts = np.bincount(trace.contents[trace.session_ids == q], minlength=trace.n_contents + 1)[1:]
        rows.append(counts / max(counts.sum(), 1))
    return np.array(rows)


def write_trace(trace: RequestTrace, path, header: dict | None = None) -> None:
    df = pd.DataFrame({"timestamp_min": trace.timestamps, "content_id": trace.contents})
    write_csv(path, df, header or {})


def read_trace(path, n_contents: int, horizon: float = DEFAULT_HORIZON) -> RequestTrace:
    df = pd.read_csv(path, comment="#")
    if list(df.columns) != ["timestamp_min", "content_id"]:
        raise ConfigError(f"{path}: expected header timestamp_min,content_id")
    return RequestTrace(df["timestamp_min"].to_numpy(), df["content_id"].to_numpy(), horizon, n_contents)
