"""Wiring from an ExperimentConfig to library objects, shared by the commands."""
import logging
import os
from dataclasses import dataclass

import numpy as np

from cachechain import artifacts
from cachechain.errors import ConfigError
from cachechain.placement import (
    PlacementTarget,
    StateDistribution,
    block_filling_eta,
    popularity_weighted_eta,
    solve_eta,
)
from cachechain.policy import ReplacementPolicy, ScaledAcceptance
from cachechain.simulator import PolicyInstance
from cachechain.state_space import ContentCatalog, StateSpace, _Space, truncate
from cachechain.workload import (
    SessionSchedule,
    gen_session_varying,
    gen_shot_noise,
    gen_static_zipf,
    read_trace,
)
from commands.config import ExperimentConfig

log = logging.getLogger(__name__)


@dataclass
class Setup:
    cfg: ExperimentConfig
    catalog: ContentCatalog
    target: PlacementTarget
    space: _Space

    @property
    def header(self) -> dict:
        return artifacts.make_header(self.cfg.effective(), self.cfg.simulation.seed)

    def path(self, *parts) -> str:
        return os.path.join(self.cfg.output.directory, *parts)

    @property
    def limits(self) -> ScaledAcceptance:
        return ScaledAcceptance(self.cfg.policy.acceptance_factor)


def prepare(cfg: ExperimentConfig) -> Setup:
    catalog = cfg.catalog.build()
    target = cfg.target.build(catalog)
    trunc = cfg.policy.truncation
    if trunc.active:
        space, _ = truncate(None, catalog, target, trunc.build(), cache_size=target.cache_size)
    else:
        space = StateSpace(catalog.n_contents, target.cache_size)
    log.info("%s: %d contents, cache size %d, %d states", cfg.name, catalog.n_contents, target.cache_size, space.n_states)
    return Setup(cfg, catalog, target, space)


def solver_eta(setup: Setup) -> StateDistribution:
    return solve_eta(setup.target, setup.space.state_matrix(), setup.cfg.target.strategy)


def block_eta(setup: Setup) -> StateDistribution:
    return block_filling_eta(setup.target, setup.space, setup.cfg.target.ordering)


def selected_eta(setup: Setup) -> StateDistribution:
    kind = setup.cfg.policy.eta
    if kind == "block_filling":
        return block_eta(setup)
    if kind == "popularity_weighted":
        return popularity_weighted_eta(setup.space, setup.catalog)
    return solver_eta(setup)


def load_eta(setup: Setup) -> StateDistribution:
    path = setup.path("placement", "eta.json")
    if not os.path.isfile(path):
        raise ConfigError(f"Missing placement artifact {path}; run the placement command first")
    return StateDistribution.from_doc(artifacts.read_json(path)["eta"], setup.space)


def load_policy(setup: Setup) -> ReplacementPolicy:
    path = setup.path("policy", "tau.json")
    if not os.path.isfile(path):
        raise ConfigError(f"Missing policy artifact {path}; run the policy command first")
    return ReplacementPolicy.from_triplets(setup.space, artifacts.read_json(path)["tau"])


def trace_source(setup: Setup):
    """A callable seed -> RequestTrace, or a fixed trace for file workloads."""
    w = setup.cfg.workload
    n = setup.catalog.n_contents
    s = w.zipf_s if w.zipf_s is not None else setup.cfg.catalog.zipf_s
    if w.kind == "file":
        return read_trace(w.trace_path, n)
    if w.kind == "static_zipf":
        if s is None:
            raise ConfigError("static_zipf workload needs zipf_s (in workload or catalog)")
        return lambda seed: gen_static_zipf(n, s, w.n_requests, seed)
    if w.kind == "shot_noise":
        if s is None:
            raise ConfigError("shot_noise workload needs zipf_s (in workload or catalog)")
        config = w.shot_noise.build(s)
        return lambda seed: gen_shot_noise(config, n, seed)
    schedule = session_schedule(setup)
    return lambda seed: gen_session_varying(schedule, w.n_requests, seed)


def session_schedule(setup: Setup) -> SessionSchedule:
    w = setup.cfg.workload
    phi = setup.catalog.avg_popularity
    if w.mode == "smooth":
        return SessionSchedule.smooth_change(phi, w.n_sessions, w.amplitude)
    return SessionSchedule.random_fluctuation(phi, w.n_sessions, w.concentration, setup.cfg.seed)


def policy_instances(
    setup: Setup,
    eta_star: StateDistribution,
    policy: ReplacementPolicy | None,
) -> dict[str, PolicyInstance]:
    """
    The proposed policy, LRU and LFU start from a state drawn from eta*. The
    static policy does too, unless the target is deterministic, in which case it
    holds the pinned contents.
    """
    out = {}
    pinned = tuple(int(k) for k in setup.target.pinned())
    for kind in setup.cfg.simulation.policies:
        if kind == "static" and len(pinned) == setup.target.cache_size:
            out[kind] = PolicyInstance(kind, space=setup.space, initial=pinned)
        else:
            out[kind] = PolicyInstance(kind, space=setup.space, eta_star=eta_star,
                                       policy=policy if kind == "proposed" else None)
    return out


def first_trace_seed(seed: int) -> int:
    return int(np.random.SeedSequence(seed).generate_state(1)[0])
