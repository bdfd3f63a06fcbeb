import numpy as np
import pytest

from exomdp.core import FactoredState, Mask
from exomdp.domains import (
    CrowdSpec,
    FactorySpec,
    GridworldSpec,
    build_crowd,
    build_factory,
    build_gridworld,
    build_preset,
    list_presets,
    permute_exo_variables,
    random_block_mdp,
)
from exomdp.estimation import (
    collect_exo_rollouts,
    estimate_reward_variables,
    exact_reduced_model,
    transition_mutual_information,
)
from exomdp.planner import value_iteration
from exomdp.search import (
    FitBudget,
    SearchParams,
    check_reduction_conditions,
    collect_search_datasets,
    estimate_objective,
)

QUICK = SearchParams(
    n_rollouts=150,
    fit=FitBudget(
        n_exo_rollouts=400, exo_horizon=40, n_full_rollouts=400, full_horizon=40
    ),
)


class TestGridworld:
    def test_default_preset_size(self, gridworld):
        full_states = gridworld.endo_cardinality * gridworld.n_exo_states
        assert 500 <= full_states <= 700
        assert gridworld.m == 5

    def test_empty_coupling_graph_gives_independent_chains(self):
        spec = GridworldSpec(xor_drivers=None)
        mdp = build_gridworld(spec)
        data = collect_exo_rollouts(mdp, 2000, 50, seed=0)
        for i in range(mdp.m):
            for j in range(mdp.m):
                if i != j:
                    assert transition_mutual_information(data, Mask((i,)), j) < 0.01

    def test_zero_rewards_give_zero_optimal_value(self):
        spec = GridworldSpec(goal_reward=0.0, crash_penalty=0.0, move_reward=0.0)
        mdp = build_gridworld(spec)
        plan = value_iteration(exact_reduced_model(mdp, Mask.full(5)), 1e-8)
        assert np.allclose(plan.values.values, 0.0)

    def test_sampled_frequencies_match_analytic_rows(self, gridworld):
        rng = np.random.default_rng(0)
        n_samples = 100_000
        for _ in range(20):
            endo = int(rng.integers(gridworld.endo_cardinality))
            x = int(rng.integers(gridworld.n_exo_states))
            action = int(rng.integers(gridworld.action_count))
            state = FactoredState(endo, gridworld.decode_exo(x))
            sample_rng = np.random.default_rng(rng.integers(2**32))
            endo_counts = np.zeros(gridworld.endo_cardinality)
            exo_counts = np.zeros(gridworld.n_exo_states)
            for _ in range(n_samples // 20):
                nxt = gridworld.sample_transition(state, action, sample_rng)
                endo_counts[nxt.endo] += 1
                exo_counts[gridworld.encode_exo(nxt.exo)] += 1
            n = endo_counts.sum()
            tv_endo = 0.5 * np.abs(
                endo_counts / n - gridworld.endo_kernel[endo, action, x]
            ).sum()
            tv_exo = 0.5 * np.abs(exo_counts / n - gridworld.exo_kernel[x]).sum()
            assert tv_endo < 0.02
            assert tv_exo < 0.05  # 32-column row at 5000 samples

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            build_gridworld(GridworldSpec(n_exo_vars=2))
        with pytest.raises(ValueError):
            build_gridworld(GridworldSpec(trap_cell=99))
        with pytest.raises(ValueError):
            build_gridworld(GridworldSpec(width=20, height=20))


class TestFactory:
    def test_distractors_only_reward_constant(self):
        spec = FactorySpec(n_task_vars=0, n_distractors=3)
        mdp = build_factory(spec)
        rng = np.random.default_rng(0)
        state = mdp.sample_initial(rng)
        assert mdp.reward(state, 0) == 0.0
        assert mdp.reward(state, 1) == 0.0
        mask = estimate_reward_variables(mdp, 0.0, 100, 5, seed=0)
        assert mask.included == ()

    def test_phase_one_captures_all_task_variables(self):
        mdp = build_factory()
        mask = estimate_reward_variables(mdp, 0.0, 250, 5, seed=2)
        assert set(mask.included) == {0, 1, 2}

    def test_greedy_misses_jointly_required_variables(self):
        from exomdp.search import mask_greedy

        mdp = build_factory()
        mask, trace = mask_greedy(mdp, lam=0.1, params=QUICK, seed=3)
        missing = {0, 1, 2} - set(mask.included)
        assert missing
        assert trace.terminal_reason == "objective-decreased"

    def test_single_task_variable_never_profitable(self):
        # reduced model with one task variable believes executing pays, but
        # the true return of that policy is negative
        mdp = build_factory()
        datasets = collect_search_datasets(mdp, QUICK, seed=1)
        single = estimate_objective(mdp, Mask((0,)), 0.0, QUICK, 1, datasets)
        empty = estimate_objective(mdp, Mask(()), 0.0, QUICK, 1, datasets)
        assert empty.mean_return == 0.0
        assert single.mean_return < 0.0


class TestCrowd:
    def test_no_agents_phase_one_suffices(self):
        spec = CrowdSpec(n_agents=0)
        mdp = build_crowd(spec)
        datasets = collect_search_datasets(mdp, QUICK, seed=0)
        p1 = estimate_reward_variables(mdp, 0.0, 250, 5, seed=0)
        full = estimate_objective(mdp, Mask.full(mdp.m), 0.0, QUICK, 0, datasets)
        phase1 = estimate_objective(mdp, p1, 0.0, QUICK, 0, datasets)
        # objects never move without agents: no information is missing
        assert phase1.mean_return >= full.mean_return - 1.0

    def test_goal_object_variable_and_hazard_screened(self):
        mdp = build_crowd()
        mask = estimate_reward_variables(mdp, 0.0, 250, 5, seed=1)
        assert mask.included == (0, 4)

    def test_agent_coupling_detected_only_for_manipulable_goal(self):
        manip = build_crowd()
        static = build_crowd(CrowdSpec(goal_object=1))
        for mdp, expect_coupled in ((manip, True), (static, False)):
            p1 = estimate_reward_variables(mdp, 0.0, 250, 5, seed=0)
            data = collect_exo_rollouts(mdp, 1500, 60, seed=0)
            agent_mi = max(
                transition_mutual_information(data, p1, j)
                for j in mdp.agent_variable_ids()
            )
            assert (agent_mi > 0.05) == expect_coupled

    def test_validation(self):
        with pytest.raises(ValueError):
            build_crowd(CrowdSpec(manipulable=(True,)))
        with pytest.raises(ValueError):
            build_crowd(CrowdSpec(goal_object=5))


class TestBlockMdp:
    def test_conditions_hold_for_designated_mask(self):
        for seed in range(5):
            mdp, mask = random_block_mdp(seed)
            assert mdp.endo_cardinality * mdp.n_exo_states <= 200
            report = check_reduction_conditions(mdp, mask)
            assert report.all_hold(), (seed, report)

    def test_unshuffled_mask_is_prefix(self):
        mdp, mask = random_block_mdp(0, shuffle=False)
        assert mask.included == tuple(range(len(mask)))

    def test_permutation_preserves_dynamics(self):
        mdp, mask = random_block_mdp(9, shuffle=False)
        order = list(reversed(range(mdp.m)))
        permuted = permute_exo_variables(mdp, order)
        rng = np.random.default_rng(0)
        # transition probabilities between corresponding joint values agree
        for _ in range(50):
            x_old = tuple(
                int(rng.integers(s.cardinality)) for s in mdp.variable_specs
            )
            y_old = tuple(
                int(rng.integers(s.cardinality)) for s in mdp.variable_specs
            )
            x_new = tuple(x_old[o] for o in order)
            y_new = tuple(y_old[o] for o in order)
            assert permuted.exo_kernel[
                permuted.encode_exo(x_new), permuted.encode_exo(y_new)
            ] == pytest.approx(
                mdp.exo_kernel[mdp.encode_exo(x_old), mdp.encode_exo(y_old)],
                abs=1e-15,
            )
            n = int(rng.integers(mdp.endo_cardinality))
            a = int(rng.integers(mdp.action_count))
            assert np.allclose(
                permuted.endo_kernel[n, a, permuted.encode_exo(x_new)],
                mdp.endo_kernel[n, a, mdp.encode_exo(x_old)],
            )
        # optimal values at the initial distribution are unchanged
        init_old = np.kron(mdp.init_endo, mdp.init_exo)
        init_new = np.kron(permuted.init_endo, permuted.init_exo)
        plan_old = value_iteration(
            exact_reduced_model(mdp, Mask.full(mdp.m)), 1e-9
        )
        plan_new = value_iteration(
            exact_reduced_model(permuted, Mask.full(mdp.m)), 1e-9
        )
        assert float(init_old @ plan_old.values.values) == pytest.approx(
            float(init_new @ plan_new.values.values), abs=1e-6
        )

    def test_permutation_validation(self):
        mdp, _ = random_block_mdp(0)
        with pytest.raises(ValueError):
            permute_exo_variables(mdp, [0] * mdp.m)


class TestPresets:
    def test_listing(self):
        assert list_presets() == ["crowd-desk", "factory-desk", "gridworld-small"]

    def test_build_with_overrides(self):
        mdp = build_preset("factory-desk", {"n_task_vars": 2, "n_distractors": 1})
        assert mdp.m == 3

    def test_tuple_coercion_from_yaml_lists(self):
        mdp = build_preset("crowd-desk", {"manipulable": [True, True]})
        assert mdp.spec.manipulable == (True, True)

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            build_preset("lunar-base")

    def test_builders_pure_given_spec_and_seed(self):
        a = build_preset("gridworld-small", {}, seed=0)
        b = build_preset("gridworld-small", {}, seed=0)
        assert np.array_equal(a.exo_kernel, b.exo_kernel)
        assert np.array_equal(a.full_reward, b.full_reward)
