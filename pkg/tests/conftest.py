"""Shared toy models and independent oracles for the test suite."""

import numpy as np
import pytest

from exomdp.core import Mask, ReducedSpace, TabularFullMdp, VariableSpec
from exomdp.estimation import TabularReducedMdp


def make_reduced(endo_table, exo_table, reward_table, discount, r_max=None):
    """Assemble a TabularReducedMdp directly from hand-written tables."""
    endo_table = np.asarray(endo_table, dtype=float)
    exo_table = np.asarray(exo_table, dtype=float)
    reward_table = np.asarray(reward_table, dtype=float)
    n, a, x, _ = endo_table.shape
    # cardinalities don't matter beyond the product; use one variable of size x
    mask = Mask((0,)) if x > 1 else Mask(())
    space = ReducedSpace(n, mask, [x])
    return TabularReducedMdp(
        mask=mask,
        space=space,
        endo_table=endo_table,
        exo_table=exo_table,
        reward_table=reward_table,
        discount=discount,
        r_max=r_max if r_max is not None else float(np.abs(reward_table).max()),
    )


def chain_reduced(rewards, gamma, transitions=None):
    """Endo-only reduced model: ``rewards[n]`` per state, one action."""
    n = len(rewards)
    if transitions is None:
        transitions = np.eye(n)
    endo = np.asarray(transitions, dtype=float).reshape(n, 1, 1, n)
    exo = np.ones((1, 1))
    reward = np.asarray(rewards, dtype=float).reshape(n, 1, 1)
    return make_reduced(endo, exo, reward, gamma)


def policy_eval_oracle(p_pi, r_pi, gamma):
    """Independent linear-system solve of V = R + gamma P V."""
    n = len(r_pi)
    return np.linalg.solve(np.eye(n) - gamma * np.asarray(p_pi), np.asarray(r_pi))


def constant_reward_mdp(components, discount=0.9, n_endo=2, n_actions=2):
    """Full MDP whose per-variable components are constants."""
    m = len(components)
    specs = tuple(VariableSpec(i, 2, f"c{i}") for i in range(m))
    x = 2**m
    endo_kernel = np.full((n_endo, n_actions, x, n_endo), 1.0 / n_endo)
    exo_kernel = np.full((x, x), 1.0 / x)
    tables = [np.full((n_endo, 2, n_actions), float(c)) for c in components]
    return TabularFullMdp(
        endo_kernel=endo_kernel,
        exo_kernel=exo_kernel,
        reward_tables=tables,
        init_endo=np.full(n_endo, 1.0 / n_endo),
        init_exo=np.full(x, 1.0 / x),
        discount=discount,
        variable_specs=specs,
        name="constant",
    )


@pytest.fixture(scope="session")
def gridworld():
    from exomdp.domains import build_gridworld

    return build_gridworld()


@pytest.fixture(scope="session")
def hand_toy():
    """2 endo x 2 exo-variable toy with hand-written tables."""
    specs = (VariableSpec(0, 2, "a"), VariableSpec(1, 2, "b"))
    # endo kernel depends on action and on the first exo variable
    endo = np.zeros((2, 2, 4, 2))
    for x in range(4):
        first = x >> 1
        endo[:, 0, x, :] = [[0.9, 0.1], [0.2, 0.8]] if first else [[0.6, 0.4], [0.4, 0.6]]
        endo[:, 1, x, :] = [[0.1, 0.9], [0.7, 0.3]]
    exo = np.array(
        [
            [0.5, 0.2, 0.2, 0.1],
            [0.1, 0.6, 0.1, 0.2],
            [0.25, 0.25, 0.25, 0.25],
            [0.05, 0.05, 0.45, 0.45],
        ]
    )
    tables = [
        np.array([[[1.0, 0.0], [0.5, 2.0]], [[0.0, 1.0], [1.5, -1.0]]]),
        np.array([[[0.2, 0.2], [-0.3, 0.1]], [[0.0, 0.4], [0.8, 0.0]]]),
    ]
    return TabularFullMdp(
        endo_kernel=endo,
        exo_kernel=exo,
        reward_tables=tables,
        init_endo=np.array([0.7, 0.3]),
        init_exo=np.array([0.4, 0.3, 0.2, 0.1]),
        discount=0.9,
        variable_specs=specs,
        name="hand-toy",
    )
