import logging

import click
import numpy as np
import pandas as pd

from cachechain import artifacts
from cachechain.placement import StateDistribution
from cachechain.policy import ReplacementPolicy
from cachechain.simulator import compare, distance_checkpoints, run
from cachechain.workload import RequestTrace
from commands.config import experiment_options, resolve
from commands.experiment import Setup, first_trace_seed, load_eta, load_policy, policy_instances, prepare, trace_source

log = logging.getLogger(__name__)


def _series(setup: Setup, plans: dict, trace: RequestTrace, eta_star: StateDistribution) -> tuple[pd.DataFrame, pd.DataFrame | None]:
    """Per-window hit ratios and, when configured, trailing-window distances on one trace."""
    sim = setup.cfg.simulation
    seed = setup.cfg.seed
    series, distances = [], []
    track = sim.state_window is not None
    for name, plan in plans.items():
        policy = plan.build(np.random.default_rng(seed))
        result = run(policy, trace, seed + 1, window=sim.window, record_states=track, space=setup.space)
        for w, (h, n) in enumerate(zip(result.window_hits, result.window_requests)):
            series.append({"name": name, "window": w, "requests": int(n), "hits": int(h),
                           "hit_ratio": float(h / n) if n else 0.0})
        if track and trace.n_requests >= sim.state_window:
            every = sim.checkpoint_every or sim.state_window
            table = distance_checkpoints(result, eta_star, sim.state_window, every)
            table.insert(0, "name", name)
            distances.append(table)
    series_df = pd.DataFrame(series, columns=["name", "window", "requests", "hits", "hit_ratio"])
    dist_df = pd.concat(distances, ignore_index=True) if distances else None
    if track and dist_df is None:
        dist_df = pd.DataFrame(columns=["name", "request", "sq_distance"])
    return series_df, dist_df


def run_simulation(
    setup: Setup,
    eta_star: StateDistribution,
    policy: ReplacementPolicy | None,
    progress: bool = False,
) -> dict:
    sim = setup.cfg.simulation
    plans = policy_instances(setup, eta_star, policy)
    traces = trace_source(setup)
    comparison = compare(plans, traces, sim.n_runs, setup.cfg.seed, progress=progress)

    first = traces if isinstance(traces, RequestTrace) else traces(first_trace_seed(setup.cfg.seed))
    series, distances = _series(setup, plans, first, eta_star)

    artifacts.write_csv(setup.path("simulate", "comparison.csv"), comparison.summary, setup.header)
    artifacts.write_csv(setup.path("simulate", "runs.csv"), comparison.runs, setup.header)
    artifacts.write_csv(setup.path("simulate", "hit_ratio_series.csv"), series, setup.header)
    if distances is not None:
        artifacts.write_csv(setup.path("simulate", "distances.csv"), distances, setup.header)
    return {"comparison": comparison, "series": series, "distances": distances}


@click.command("simulate")
@experiment_options
def command(config_path, seed, out, no_refine, truncate_states, progress):
    """Run the configured policies on generated traces and write comparison tables."""
    setup = prepare(resolve(config_path, seed, out, no_refine, truncate_states))
    eta_star = load_eta(setup)
    policy = load_policy(setup) if "proposed" in setup.cfg.simulation.policies else None
    result = run_simulation(setup, eta_star, policy, progress=progress)
    for row in result["comparison"].summary.itertuples():
        click.echo(f"{row.name}: hit ratio {row.hit_ratio_mean:.4f} +/- {row.hit_ratio_ci:.4f}, "
                   f"replacements {row.replacements_mean:.1f}")
