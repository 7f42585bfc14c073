import itertools

import numpy as np
import pytest

from mobiprod.instances import build_chain
from mobiprod.modulation import ModulationModel, bayes_update, belief_grid, demand_likelihood, demand_scenarios, \
    expected_demand, grid_size, local_demand_pmf, local_posterior, nearest_grid_index, nearest_grid_point, posterior, \
    predictive, sigma, stationary_distribution
from mobiprod.shared.errors import InvalidModel, NoStationaryDistribution, ZeroLikelihood


def coin_model(transition=((1.0, 0.0), (0.0, 1.0)), pmf=((0.9, 0.1), (0.1, 0.9)), L=1):
    return ModulationModel(
        transition=[list(r) for r in transition],
        outcomes=[0, 1],
        demand_pmf=[[list(p) for p in pmf] for _ in range(L)],
    )


def random_model(rng, n_states=3, L=2, n_outcomes=3):
    P = rng.dirichlet(np.ones(n_states), size=n_states)
    O = rng.dirichlet(np.ones(n_outcomes), size=(L, n_states))
    return ModulationModel(transition=(P / P.sum(axis=1, keepdims=True)).tolist(),
                           outcomes=list(range(n_outcomes)),
                           demand_pmf=(O / O.sum(axis=2, keepdims=True)).tolist())


def test_stationary_symmetric_chain():
    result = stationary_distribution(coin_model(transition=((0.75, 0.25), (0.25, 0.75))))
    assert result.unique
    np.testing.assert_allclose(result.pi, [0.5, 0.5], atol=1e-12)


def test_stationary_birth_death_chain():
    model = ModulationModel(transition=build_chain(3, 0.95), outcomes=[0],
                            demand_pmf=[[[1.0], [1.0], [1.0]]])
    pi = stationary_distribution(model).pi
    np.testing.assert_allclose(pi, [0.25, 0.5, 0.25], atol=1e-10)
    np.testing.assert_allclose(pi @ model.P, pi, atol=1e-10)


def test_stationary_identity_is_not_unique():
    model = coin_model()
    result = stationary_distribution(model)
    assert not result.unique
    assert abs(result.pi.sum() - 1.0) < 1e-12
    with pytest.raises(NoStationaryDistribution):
        stationary_distribution(model, strict=True)


def test_sigma_hand_example():
    model = coin_model()
    x = np.array([0.5, 0.5])
    assert sigma(model, [0], None, x) == pytest.approx(0.5)


def test_sigma_single_state_is_product_of_marginals():
    model = ModulationModel(transition=[[1.0]], outcomes=[0, 1, 2],
                            demand_pmf=[[[0.2, 0.5, 0.3]], [[0.6, 0.3, 0.1]]])
    assert sigma(model, [1, 0], None, np.array([1.0])) == pytest.approx(0.5 * 0.6)


def test_sigma_sums_to_one(rng):
    for _ in range(5):
        model = random_model(rng)
        x = rng.dirichlet(np.ones(model.n_states))
        total = sum(sigma(model, d, None, x) for d in demand_scenarios(model))
        assert abs(total - 1.0) <= 1e-10


def test_sigma_with_aod_channel_sums_to_one():
    model = ModulationModel(transition=[[0.7, 0.3], [0.2, 0.8]], outcomes=[0, 1],
                            demand_pmf=[[[0.9, 0.1], [0.1, 0.9]]],
                            aod_pmf=[[0.5, 0.5], [0.1, 0.9]])
    x = np.array([0.3, 0.7])
    total = sum(sigma(model, [d], z, x) for d, z in itertools.product([0, 1], [0, 1]))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_posterior_hand_example():
    model = coin_model()
    np.testing.assert_allclose(posterior(model, [0], None, np.array([0.5, 0.5])), [0.9, 0.1], atol=1e-12)


def test_posterior_degenerate_belief_is_absorbing():
    model = coin_model()
    for d in (0, 1):
        np.testing.assert_allclose(posterior(model, [d], None, np.array([1.0, 0.0])), [1.0, 0.0])


def test_posterior_uninformative_observation_returns_prediction():
    model = coin_model(transition=((0.6, 0.4), (0.3, 0.7)), pmf=((0.5, 0.5), (0.5, 0.5)))
    x = np.array([0.2, 0.8])
    np.testing.assert_allclose(posterior(model, [1], None, x), x @ model.P, atol=1e-12)


def test_posterior_zero_likelihood():
    model = coin_model(pmf=((1.0, 0.0), (0.1, 0.9)))
    with pytest.raises(ZeroLikelihood):
        posterior(model, [1], None, np.array([1.0, 0.0]))


def test_posterior_is_a_belief(rng):
    model = random_model(rng)
    x = rng.dirichlet(np.ones(model.n_states))
    for d in demand_scenarios(model):
        post = posterior(model, d, None, x)
        assert (post >= 0).all()
        assert abs(post.sum() - 1.0) <= 1e-12



def test_posterior_ignores_likelihood_scale(rng):
    model = random_model(rng)
    x = rng.dirichlet(np.ones(model.n_states))
    for d in demand_scenarios(model):
        like = demand_likelihood(model, d)
        for scale in (1e-3, 7.5):
            np.testing.assert_allclose(bayes_update(predictive(model, x), scale * like),
                                       posterior(model, d, None, x), atol=1e-10)


def test_local_posterior_matches_posterior_for_one_location():
    model = coin_model(transition=((0.75, 0.25), (0.25, 0.75)))
    x = np.array([0.4, 0.6])
    np.testing.assert_allclose(local_posterior(model, 0, 1, x), posterior(model, [1], None, x), atol=1e-12)
    np.testing.assert_allclose(local_posterior(coin_model(), 0, 0, np.array([0.5, 0.5])), [0.9, 0.1])


def test_local_demand_pmf_is_predictive_mixture():
    model = coin_model(transition=((0.75, 0.25), (0.25, 0.75)))
    x = np.array([1.0, 0.0])
    # xP = (0.75, 0.25)
    np.testing.assert_allclose(local_demand_pmf(model, 0, x), [0.75 * 0.9 + 0.25 * 0.1, 0.75 * 0.1 + 0.25 * 0.9])


def test_expected_demand():
    assert expected_demand(coin_model(), 0, np.array([0.5, 0.5])) == pytest.approx(0.5)
    assert expected_demand(coin_model(), 0, np.array([0.0, 1.0])) == pytest.approx(0.9)
    constant = ModulationModel(transition=[[0.5, 0.5], [0.5, 0.5]], outcomes=[0, 3],
                               demand_pmf=[[[0.0, 1.0], [0.0, 1.0]]])
    assert expected_demand(constant, 0, np.array([0.3, 0.7])) == pytest.approx(3.0)


def test_belief_grid_two_states():
    grid = belief_grid(2, 3)
    np.testing.assert_allclose(grid.array, [[0, 1], [1 / 3, 2 / 3], [2 / 3, 1 / 3], [1, 0]])
    assert grid.stationary_index is None


def test_belief_grid_sizes():
    assert len(belief_grid(3, 3)) == 10 == grid_size(3, 3)
    assert len(belief_grid(1, 3)) == 1
    assert len(belief_grid(4, 2)) == grid_size(4, 2)


def test_belief_grid_adds_stationary_point_once():
    with_pi = belief_grid(2, 3, np.array([0.5, 0.5]))
    assert len(with_pi) == 5
    assert with_pi.stationary_index == 4
    on_lattice = belief_grid(3, 2, np.array([0.5, 0.0, 0.5]))
    assert len(on_lattice) == grid_size(3, 2)
    np.testing.assert_allclose(on_lattice.point(on_lattice.stationary_index), [0.5, 0.0, 0.5])


def test_belief_grid_rejects_bad_resolution():
    with pytest.raises(InvalidModel):
        belief_grid(2, 0)


def test_nearest_grid_point():
    grid = belief_grid(2, 3)
    np.testing.assert_allclose(nearest_grid_point(grid, np.array([0.4, 0.6])), [1 / 3, 2 / 3])
    np.testing.assert_allclose(nearest_grid_point(grid, np.array([2 / 3, 1 / 3])), [2 / 3, 1 / 3])
    # equidistant: earlier point in grid order
    assert nearest_grid_index(grid, np.array([0.5, 0.5])) == 1


def test_model_rejects_non_stochastic_rows():
    with pytest.raises(InvalidModel):
        coin_model(transition=((0.5, 0.4), (0.5, 0.5)))
    with pytest.raises(InvalidModel):
        coin_model(pmf=((0.9, 0.2), (0.1, 0.9)))


def test_model_rejects_bad_outcomes():
    with pytest.raises(InvalidModel):
        ModulationModel(transition=[[1.0]], outcomes=[-1, 0], demand_pmf=[[[0.5, 0.5]]])
    with pytest.raises(InvalidModel):
        ModulationModel(transition=[[1.0]], outcomes=[], demand_pmf=[[[]]])
