import numpy as np
import pytest

from cachechain.errors import ConfigError, InfeasibleTarget
from cachechain.placement import (
    STRATEGIES,
    PlacementTarget,
    StateDistribution,
    block_filling_eta,
    block_layout,
    capped_proportional,
    popularity_weighted_eta,
    sample_state,
    sample_states,
    solve_eta,
    top_c,
    validate_eta,
)
from cachechain.state_space import ContentCatalog, StateSpace
from tests.conftest import ETA_1, ETA_2, random_eta


@pytest.mark.parametrize("eta", [ETA_1, ETA_2])
def test_worked_example_distributions_implement_target(space52, target52, eta):
    report = validate_eta(eta, target52, space52.state_matrix())
    assert report.passed, report.messages
    assert report.residual_inf < 1e-12


def test_validate_eta_flags_problems(space52, target52):
    bad = np.array(ETA_1)
    bad[3] = 0.05  # {1,5} caches a p=0 content
    bad[0] -= 0.05
    report = validate_eta(bad, target52, space52.state_matrix())
    assert not report.passed
    assert report.support_violations == [3]
    assert report.residual_inf > 0.01


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_each_strategy_implements_target(space52, target52, strategy):
    eta = solve_eta(target52, space52.state_matrix(), strategy)
    report = validate_eta(eta, target52, space52.state_matrix())
    assert report.passed, report.messages
    # content 5 has p = 0
    assert all(5 not in space52.contents(int(m)) for m in eta.support)


def test_min_norm_falls_back_when_negative(space52):
    # the closed form puts negative mass on {4,5} for this target
    target = PlacementTarget([1.0, 0.5, 0.5, 0.0, 0.0], 2)
    S = space52.state_matrix()
    eta = solve_eta(target, S, "min_norm")
    assert np.array_equal(eta.probs, solve_eta(target, S, "min_support").probs)
    assert validate_eta(eta, target, S).passed


def test_min_support_is_a_vertex(space52, target52):
    eta = solve_eta(target52, space52.state_matrix(), "min_support")
    assert eta.support.size <= 4


def test_max_entropy_covers_every_eligible_state(space52, target52):
    eta = solve_eta(target52, space52.state_matrix(), "max_entropy")
    eligible = [m for m in range(10) if 5 not in space52.contents(m)]
    assert list(eta.support) == eligible


def test_random_targets_revalidate():
    rng = np.random.default_rng(5)
    for n_contents, c in [(5, 2), (6, 3), (7, 2), (8, 4)]:
        space = StateSpace(n_contents, c)
        S = space.state_matrix()
        for _ in range(5):
            p = S @ random_eta(rng, space.n_states).probs
            target = PlacementTarget(p, c)
            for strategy in STRATEGIES:
                eta = solve_eta(target, S, strategy)
                assert validate_eta(eta, target, S).passed


def test_degenerate_target_is_a_single_state(space52):
    target = PlacementTarget([1, 1, 0, 0, 0], 2)
    for strategy in STRATEGIES:
        eta = solve_eta(target, space52.state_matrix(), strategy)
        assert list(eta.support) == [0]
        assert eta.probs[0] == pytest.approx(1.0)
    assert list(block_filling_eta(target, space52).support) == [0]


def test_unknown_strategy(space52, target52):
    with pytest.raises(ConfigError):
        solve_eta(target52, space52.state_matrix(), "fastest")


def test_block_filling_worked_example(space52, target52):
    eta = block_filling_eta(target52, space52)
    assert eta.as_dict() == pytest.approx({0: 0.6, 1: 0.3, 5: 0.1})
    assert validate_eta(eta, target52, space52.state_matrix()).passed


def test_block_layout_wraps_rows(target52):
    layout = block_layout(target52)
    assert layout.order == (1, 2, 3, 4)
    pieces = [(k, row) for k, row, _, _ in layout.segments()]
    assert pieces == [(1, 0), (2, 0), (2, 1), (3, 1), (4, 1)]


def test_block_filling_custom_ordering(space52, target52):
    eta = block_filling_eta(target52, space52, ordering=[2, 1, 3, 4, 5])
    assert validate_eta(eta, target52, space52.state_matrix()).passed
    with pytest.raises(ConfigError):
        block_filling_eta(target52, space52, ordering=[1, 2, 3])


def test_capped_proportional():
    flat = capped_proportional(ContentCatalog.zipf(5, 0.8), 2)
    assert flat.probs.sum() == pytest.approx(2.0)
    assert np.all(np.diff(flat.probs) < 0)
    assert flat.probs.max() < 1

    steep = capped_proportional(ContentCatalog.zipf(5, 2.0), 2)
    assert steep.probs[0] == 1.0
    assert steep.probs.sum() == pytest.approx(2.0)
    assert np.all(steep.probs <= 1.0)


def test_capped_proportional_when_capped_contents_fill_the_cache():
    target = capped_proportional(ContentCatalog([0.5, 0.5, 0.0, 0.0]), 2)
    assert list(target.probs) == [1.0, 1.0, 0.0, 0.0]
    assert list(target.pinned()) == [1, 2]


def test_top_c_breaks_ties_by_id():
    target = top_c(ContentCatalog(np.full(5, 0.2)), 2)
    assert list(target.probs) == [1, 1, 0, 0, 0]
    assert list(target.pinned()) == [1, 2]
    assert list(target.excluded()) == [3, 4, 5]


def test_placement_target_validation():
    with pytest.raises(ConfigError):
        PlacementTarget([0.9, 0.7, 0.3, 0.1, 0.1], 2)
    with pytest.raises(ConfigError):
        PlacementTarget([1.5, 0.5, 0.0], 2)
    with pytest.raises(ConfigError):
        PlacementTarget([[1.0, 1.0]], 2)
    with pytest.raises(ConfigError):
        PlacementTarget([np.nan, 1.0, 1.0], 2)
    with pytest.raises(ConfigError):
        PlacementTarget([np.nan, np.nan], 2)


def test_state_distribution_validation():
    with pytest.raises(InfeasibleTarget):
        StateDistribution([0.5, 0.6])
    with pytest.raises(InfeasibleTarget):
        StateDistribution([1.1, -0.1])
    assert StateDistribution.unchecked([0.5, 0.6]).probs.sum() == pytest.approx(1.1)


def test_popularity_weighted_eta(space52, zipf5):
    eta = popularity_weighted_eta(space52, zipf5)
    assert eta.probs.sum() == pytest.approx(1.0)
    assert int(np.argmax(eta.probs)) == 0
    assert int(np.argmin(eta.probs)) == 9


def test_sample_state_inverse_cdf():
    eta = StateDistribution(ETA_1)
    assert sample_state(eta, 0.0) == 0
    assert sample_state(eta, 0.6) == 0
    assert sample_state(eta, 0.7) == 1
    assert sample_state(eta, 0.95) == 4
    assert sample_state(eta, 1.0) == 4


def test_sample_states_frequencies():
    eta = StateDistribution(ETA_1)
    n = 100_000
    draws = sample_states(eta, np.random.default_rng(9), n)
    counts = np.bincount(draws, minlength=10) / n
    for m, p in enumerate(ETA_1):
        assert abs(counts[m] - p) <= 4 * np.sqrt(p * (1 - p) / n) + 1e-12


def test_distribution_doc_round_trip(space52):
    eta = StateDistribution(ETA_2)
    doc = eta.to_doc(space52)
    assert doc["states"][0] == [1, 2]
    assert np.allclose(StateDistribution.from_doc(doc, space52).probs, ETA_2)
    with pytest.raises(ConfigError):
        StateDistribution.from_doc(doc, StateSpace(6, 2))


def test_pinned_content_restricts_support():
    space = StateSpace(4, 2)
    target = PlacementTarget([1.0, 0.5, 0.3, 0.2], 2)
    for strategy in STRATEGIES:
        eta = solve_eta(target, space.state_matrix(), strategy)
        assert all(1 in space.contents(int(m)) for m in eta.support)
        # {1,2}, {1,3}, {1,4} carry exactly the fractional probabilities
        assert eta.probs[[0, 1, 2]] == pytest.approx([0.5, 0.3, 0.2])


def test_validate_eta_reports_mass_deficit(space52, target52):
    short = np.array(ETA_1) * 0.9
    report = validate_eta(short, target52, space52.state_matrix())
    assert not report.passed
    assert report.total == pytest.approx(0.9)
    assert any("sums to" in msg for msg in report.messages)


def test_null_space_perturbations(space52, target52):
    S = space52.state_matrix().dense()
    _, _, vt = np.linalg.svd(S)
    null = vt[5:]
    rng = np.random.default_rng(4)
    base = np.array(ETA_2)
    for _ in range(20):
        v = null.T @ rng.normal(size=null.shape[0])
        eta = base + 0.01 * v / np.abs(v).max()
        report = validate_eta(eta, target52, space52.state_matrix())
        assert report.residual_inf < 1e-12
        assert report.total == pytest.approx(1.0, abs=1e-12)
        # the null space reaches states that cache content 5
        assert report.support_violations
        assert not report.passed


def test_sample_state_worked_example():
    assert sample_state(StateDistribution(ETA_1), 0.65) == 1
    assert sample_state(StateDistribution(np.eye(10)[0]), 0.99) == 0
