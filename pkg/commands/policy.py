import logging

import click

from cachechain import artifacts
from cachechain.errors import InconsistentPolicy
from cachechain.placement import StateDistribution
from cachechain.policy import compile_policy, mixing_report, verify_chain
from commands.config import experiment_options, resolve
from commands.experiment import Setup, load_eta, prepare

log = logging.getLogger(__name__)


def run_policy(setup: Setup, eta_star: StateDistribution) -> dict:
    """Build, verify and write Theta (unrefined and refined) and tau."""
    cfg = setup.cfg.policy
    compiled = compile_policy(setup.space, eta_star, setup.catalog, setup.limits, refine=cfg.refine)
    chains = {"basic": compiled.theta_basic}
    if cfg.refine:
        chains["refined"] = compiled.theta

    verification, mixing = {}, {}
    for name, theta in chains.items():
        report = verify_chain(theta, eta_star, setup.catalog)
        verification[name] = report.to_dict()
        log.info("theta[%s]: %d states, nnz %d, verification %s",
                 name, theta.n, theta.matrix.nnz, "passed" if report.passed else "FAILED")
        artifacts.write_json(setup.path("policy", f"theta_{name}.json"), {"theta": theta.to_triplets()}, setup.header)
        if cfg.mixing_trials:
            mixing[name] = mixing_report(theta, eta_star, cfg.mixing_trials, cfg.mixing_threshold,
                                         setup.cfg.seed, cfg.mixing_t_max).to_dict()

    artifacts.write_json(setup.path("policy", "tau.json"), {"tau": compiled.policy.to_triplets()}, setup.header)
    artifacts.write_json(setup.path("policy", "sequences.json"), {"sequences": compiled.decomposition.to_dict()}, setup.header)
    artifacts.write_json(setup.path("policy", "verification.json"), {"verification": verification}, setup.header)
    if mixing:
        artifacts.write_json(setup.path("policy", "mixing.json"), {"mixing": mixing}, setup.header)
    return {"compiled": compiled, "verification": verification, "mixing": mixing}


@click.command("policy")
@experiment_options
def command(config_path, seed, out, no_refine, truncate_states, progress):
    """Generate the replacement chain for eta* and check its steady state."""
    setup = prepare(resolve(config_path, seed, out, no_refine, truncate_states))
    result = run_policy(setup, load_eta(setup))
    failed = [name for name, v in result["verification"].items() if not v["passed"]]
    if failed:
        raise InconsistentPolicy(f"Steady-state verification failed for: {', '.join(failed)}")
    click.echo(f"policy: verification passed -> {setup.path('policy')}")
