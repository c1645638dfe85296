import logging

import click

from cachechain import artifacts
from cachechain.placement import validate_eta
from commands.config import experiment_options, resolve
from commands.experiment import Setup, block_eta, prepare, selected_eta, solver_eta

log = logging.getLogger(__name__)


def run_placement(setup: Setup) -> dict:
    """Write eta (selected, solver and block-filling variants) with validation reports."""
    matrix = setup.space.state_matrix()
    variants = {"solver": solver_eta(setup), "block_filling": block_eta(setup)}
    selected = setup.cfg.policy.eta
    eta = variants[selected] if selected in variants else selected_eta(setup)
    variants.setdefault(selected, eta)

    reports = {}
    for name, dist in variants.items():
        report = validate_eta(dist, setup.target, matrix)
        reports[name] = report.to_dict()
        artifacts.write_json(setup.path("placement", f"eta_{name}.json"), {"eta": dist.to_doc(setup.space)}, setup.header)
        log.info("eta[%s]: support %d, residual %.2e, %s",
                 name, dist.support.size, report.residual_inf, "ok" if report.passed else "FAILED")

    artifacts.write_json(setup.path("placement", "eta.json"),
                         {"eta": eta.to_doc(setup.space), "variant": selected}, setup.header)
    artifacts.write_json(setup.path("placement", "report.json"),
                         {"reports": reports, "selected": selected}, setup.header)
    return {"eta": eta, "reports": reports}


@click.command("placement")
@experiment_options
def command(config_path, seed, out, no_refine, truncate_states, progress):
    """Compute the state distribution eta* implementing the target caching probabilities."""
    setup = prepare(resolve(config_path, seed, out, no_refine, truncate_states))
    result = run_placement(setup)
    click.echo(f"placement: {result['eta'].support.size} states in support -> {setup.path('placement')}")
