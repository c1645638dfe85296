"""
One-command reproductions of the four reference experiments.

Each example has a pinned ExperimentConfig. The run writes the usual placement,
policy and simulation artifacts under <out>/example<N>/ plus summary.json with
every acceptance check; a failed check exits with code 2.
"""
import logging
from dataclasses import dataclass

import click
import numpy as np
import pandas as pd

from cachechain import artifacts
from cachechain.errors import AcceptanceFailure
from cachechain.policy import compile_policy
from cachechain.simulator import distance_checkpoints, run, sweep
from cachechain.workload import gen_static_zipf
from commands.config import ExperimentConfig
from commands.experiment import Setup, policy_instances, prepare, selected_eta, trace_source
from commands.placement import run_placement
from commands.policy import run_policy
from commands.simulate import run_simulation

log = logging.getLogger(__name__)

DEFAULT_SEED = 20190601
STATIC_HIT_RATIO_EXAMPLE3 = 2 / 23

EXAMPLES = {
    1: {
        "name": "example1",
        "catalog": {"n_contents": 5, "zipf_s": 0.8},
        "target": {"cache_size": 2, "rule": "capped_proportional", "strategy": "max_entropy"},
        "policy": {"mixing_trials": 10_000, "mixing_threshold": 1e-3},
        "simulation": {"policies": ["proposed", "static", "lru", "lfu"]},
        "workload": {"kind": "static_zipf", "n_requests": 100_000},
    },
    2: {
        "name": "example2",
        "catalog": {"n_contents": 15, "zipf_s": 0.8},
        # contents 1-5 always cached, 6-10 at 0.6, 11-15 never: eta* is uniform on ten states
        "target": {"cache_size": 8, "probs": [1.0] * 5 + [0.6] * 5 + [0.0] * 5, "strategy": "max_entropy"},
        "policy": {"mixing_trials": 0},
        "workload": {"kind": "static_zipf", "n_requests": 1_000_000},
        "simulation": {"policies": ["proposed", "lru", "lfu"], "state_window": 10_000, "checkpoint_every": 10_000},
    },
    3: {
        "name": "example3",
        "catalog": {"n_contents": 23, "popularity": [1 / 23] * 23},
        "target": {"cache_size": 2, "rule": "capped_proportional", "strategy": "max_entropy"},
        "policy": {"mixing_trials": 0},
        "workload": {"kind": "session", "n_requests": 2_000_000, "n_sessions": 50},
        "simulation": {"policies": ["proposed", "static"]},
    },
    4: {
        "name": "example4",
        "catalog": {"n_contents": 10_000, "zipf_s": 0.8},
        "target": {"cache_size": 30, "rule": "top_c"},
        "policy": {
            "eta": "popularity_weighted",
            "mixing_trials": 0,
            "truncation": {"drop_zero_prob": False, "pin_certain": False, "top_k_states": 30},
        },
        "workload": {"kind": "shot_noise"},
        "simulation": {"policies": ["proposed", "static", "lru"], "n_runs": 40},
    },
}

EXAMPLE2_BURN_IN = 100_000
EXAMPLE2_DISTANCE = 0.05
EXAMPLE3_STATIC_BAND = 0.005
EXAMPLE3_MIN_GAIN = 1.10
EXAMPLE4_REPLACEMENT_RATIO = 0.2
SWEEPS = {
    "zipf_s": [0.6, 0.7, 0.8, 0.9, 1.0, 1.1],
    "cache_size": [10, 30, 60, 100],
    "mean_lifetime": [10.0, 20.0, 32.7, 50.0],
}


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "threshold": self.threshold, "passed": self.passed}


def pinned_config(example_id: int, seed: int, out: str, runs: int | None = None, mode: str | None = None) -> ExperimentConfig:
    raw = {k: (dict(v) if isinstance(v, dict) else v) for k, v in EXAMPLES[example_id].items()}
    raw["simulation"] = {**raw.get("simulation", {}), "seed": seed}
    if runs is not None:
        raw["simulation"]["n_runs"] = runs
    if mode is not None:
        raw["workload"] = {**raw["workload"], "mode": mode}
        raw["name"] = f"{raw['name']}_{mode}"
    raw["output"] = {"directory": out}
    return ExperimentConfig.model_validate(raw)


def _bundle(setup: Setup) -> tuple:
    """Placement and policy artifacts; returns (eta*, compiled, verification, mixing)."""
    eta_star = run_placement(setup)["eta"]
    result = run_policy(setup, eta_star)
    return eta_star, result["compiled"], result["verification"], result["mixing"]


def _verified(verification: dict) -> list[Check]:
    return [Check(f"theta_{name}_verified", float(v["passed"]), 1.0, v["passed"]) for name, v in verification.items()]


def example1(seed: int, out: str, runs: int | None, progress: bool) -> list[Check]:
    setup = prepare(pinned_config(1, seed, out, runs))
    eta_star, compiled, verification, mixing = _bundle(setup)
    run_simulation(setup, eta_star, compiled.policy, progress)
    checks = _verified(verification)
    for name, m in mixing.items():
        checks.append(Check(f"{name}_all_converged", m["n_converged"], m["n_trials"], m["n_converged"] == m["n_trials"]))
    basic, refined = mixing["basic"]["median_iterations"], mixing["refined"]["median_iterations"]
    speedup = basic / refined if refined else float("inf")
    checks.append(Check("refined_median_speedup", speedup, 2.0, speedup >= 2.0))
    return checks


def example2(seed: int, out: str, runs: int | None, progress: bool) -> list[Check]:
    setup = prepare(pinned_config(2, seed, out, runs))
    eta_star, compiled, verification, _ = _bundle(setup)
    sim = setup.cfg.simulation
    trace = gen_static_zipf(setup.catalog.n_contents, setup.cfg.catalog.zipf_s, setup.cfg.workload.n_requests, seed)
    plans = policy_instances(setup, eta_star, compiled.policy)

    tables, summaries = [], []
    for name, plan in plans.items():
        policy = plan.build(np.random.default_rng(seed))
        result = run(policy, trace, seed + 1, record_states=True, space=setup.space)
        table = distance_checkpoints(result, eta_star, sim.state_window, sim.checkpoint_every)
        table.insert(0, "name", name)
        tables.append(table)
        summaries.append({"name": name, **result.summary()})
    distances = pd.concat(tables, ignore_index=True)
    artifacts.write_csv(setup.path("simulate", "distances.csv"), distances, setup.header)
    artifacts.write_csv(setup.path("simulate", "comparison.csv"), pd.DataFrame(summaries), setup.header)

    checks = _verified(verification)
    proposed = distances[distances["name"] == "proposed"]
    terminal = float(proposed["sq_distance"].iloc[-1])
    checks.append(Check("proposed_terminal_sq_distance", terminal, EXAMPLE2_DISTANCE, terminal < EXAMPLE2_DISTANCE))
    for name in ("lru", "lfu"):
        after = distances[(distances["name"] == name) & (distances["request"] >= EXAMPLE2_BURN_IN)]
        low = float(after["sq_distance"].min())
        checks.append(Check(f"{name}_min_sq_distance_after_burn_in", low, terminal, low > terminal))
    return checks


def example3(seed: int, out: str, runs: int | None, progress: bool) -> list[Check]:
    checks = []
    for mode in ("random", "smooth"):
        setup = prepare(pinned_config(3, seed, f"{out}/{mode}", runs, mode=mode))
        eta_star, compiled, verification, _ = _bundle(setup)
        result = run_simulation(setup, eta_star, compiled.policy, progress)
        summary = result["comparison"].summary.set_index("name")
        static = float(summary.loc["static", "hit_ratio_mean"])
        proposed = float(summary.loc["proposed", "hit_ratio_mean"])
        checks.extend(_verified(verification))
        checks.append(Check(f"{mode}_static_hit_ratio", static, STATIC_HIT_RATIO_EXAMPLE3,
                            abs(static - STATIC_HIT_RATIO_EXAMPLE3) <= EXAMPLE3_STATIC_BAND))
        gain = proposed / static if static else float("inf")
        checks.append(Check(f"{mode}_proposed_over_static", gain, EXAMPLE3_MIN_GAIN, gain >= EXAMPLE3_MIN_GAIN))
    return checks


def _example4_setup(seed: int, out: str, runs: int | None, **changes):
    raw = pinned_config(4, seed, out, runs).model_dump()
    if "zipf_s" in changes:
        raw["catalog"]["zipf_s"] = changes["zipf_s"]
    if "cache_size" in changes:
        raw["target"]["cache_size"] = changes["cache_size"]
    if "mean_lifetime" in changes:
        raw["workload"]["shot_noise"]["mean_lifetime"] = changes["mean_lifetime"]
    setup = prepare(ExperimentConfig.model_validate(raw))
    eta_star = selected_eta(setup)
    compiled = compile_policy(setup.space, eta_star, setup.catalog, setup.limits)
    return policy_instances(setup, eta_star, compiled.policy), trace_source(setup)


def example4(seed: int, out: str, runs: int | None, progress: bool, sweep_runs: int = 8) -> list[Check]:
    setup = prepare(pinned_config(4, seed, out, runs))
    eta_star, compiled, verification, _ = _bundle(setup)
    result = run_simulation(setup, eta_star, compiled.policy, progress)
    summary = result["comparison"].summary.set_index("name")

    for parameter, values in SWEEPS.items():
        def grid_point(value, parameter=parameter):
            return _example4_setup(seed, out, runs, **{parameter: value})

        table = sweep(values, grid_point, sweep_runs, seed, parameter=parameter, progress=progress)
        artifacts.write_csv(setup.path("simulate", f"sweep_{parameter}.csv"), table, setup.header)

    checks = _verified(verification)
    proposed = float(summary.loc["proposed", "hit_ratio_mean"])
    static = float(summary.loc["static", "hit_ratio_mean"])
    checks.append(Check("proposed_hit_ratio_over_static", proposed - static, 0.0, proposed >= static))
    lru_repl = float(summary.loc["lru", "replacements_mean"])
    ratio = float(summary.loc["proposed", "replacements_mean"]) / lru_repl if lru_repl else 0.0
    checks.append(Check("proposed_over_lru_replacements", ratio, EXAMPLE4_REPLACEMENT_RATIO,
                        ratio <= EXAMPLE4_REPLACEMENT_RATIO))
    return checks


RUNNERS = {1: example1, 2: example2, 3: example3, 4: example4}


def reproduce(example_id: int, seed: int, out: str, runs: int | None = None, progress: bool = False) -> list[Check]:
    """Run one example end to end and write summary.json; raises AcceptanceFailure on a failed check."""
    target_dir = f"{out}/example{example_id}"
    checks = RUNNERS[example_id](seed, target_dir, runs, progress)
    passed = all(c.passed for c in checks)
    header = artifacts.make_header(EXAMPLES[example_id], seed)
    artifacts.write_json(f"{target_dir}/summary.json",
                         {"example": example_id, "passed": passed, "checks": [c.to_dict() for c in checks]}, header)
    for c in checks:
        log.info("example %d %-40s %s (%.6g vs %.6g)", example_id, c.name, "ok" if c.passed else "FAIL", c.value, c.threshold)
    if not passed:
        violations = [f"{c.name}: {c.value:.6g} vs {c.threshold:.6g}" for c in checks if not c.passed]
        raise AcceptanceFailure(f"Example {example_id}: {len(violations)} acceptance checks failed", violations)
    return checks


@click.command("reproduce")
@click.argument("example_id", type=click.IntRange(1, 4))
@click.option("--seed", type=click.IntRange(min=0), default=DEFAULT_SEED, show_default=True, help="Master seed.")
@click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True, help="Output directory.")
@click.option("--runs", type=click.IntRange(min=1), default=None, help="Override the number of runs per point.")
@click.option("--progress", is_flag=True, help="Show progress bars.")
def command(example_id, seed, out, runs, progress):
    """Reproduce example 1, 2, 3 or 4 and check it against its acceptance thresholds."""
    checks = reproduce(example_id, seed, out, runs, progress)
    click.echo(f"example {example_id}: {len(checks)} checks passed -> {out}/example{example_id}")
