"""Smoke test for the adr_py extension module.

Build the module first, for example:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml

then run ``python python/smoke_test.py``.
"""

import math
import os
import tempfile

import adr_py


def check_transfers():
    mu, re_km = adr_py.MU_KM3_S2, adr_py.EARTH_RADIUS_KM
    r1, r2 = re_km + 700.0, re_km + 800.0
    a = (r1 + r2) / 2
    dv1 = math.sqrt(mu / r1) * (math.sqrt(2 * r2 / (r1 + r2)) - 1)
    dv2 = math.sqrt(mu / r2) * (1 - math.sqrt(2 * r1 / (r1 + r2)))
    plan = adr_py.hohmann(700.0, 800.0)
    assert math.isclose(plan["delta_v_total_km_s"], dv1 + dv2, rel_tol=1e-12)
    assert math.isclose(plan["time_of_flight_s"], math.pi * math.sqrt(a**3 / mu), rel_tol=1e-12)
    assert adr_py.hohmann(750.0, 750.0)["delta_v_total_km_s"] == 0.0
    above = adr_py.ca_detour(700.0, 800.0, 10.0, "above")
    assert above["delta_v_total_km_s"] > plan["delta_v_total_km_s"]


def check_episode():
    scenario = adr_py.Scenario.generate(7, n_debris=8, collision_probability=1 / 3)
    assert scenario.n == 8
    assert all(700.0 <= a <= 800.0 for a in scenario.altitudes_km)
    again = adr_py.Scenario.from_csv(scenario.to_csv())
    assert again.altitudes_km == scenario.altitudes_km

    env = adr_py.MissionEnv(scenario, seed=3)
    obs = env.reset(3)
    assert len(obs) == env.observation_size
    total = 0.0
    while not env.terminal:
        mask = env.action_mask()
        assert len(mask) == env.n_actions
        action = env.greedy_action()
        assert mask[action]
        obs, reward, terminal, info = env.step(action)
        total += reward
    assert total == env.episode_return
    print("trace:", env.trace())
    print("termination:", env.termination, "visited:", env.visited_count)


def check_policy_and_ppo():
    probs = adr_py.masked_softmax([0.0, 0.0, 0.0, 0.0], [True, True, False, True])
    assert probs[2] == 0.0 and math.isclose(sum(probs), 1.0)
    assert math.isclose(adr_py.clipped_surrogate(2.0, 1.0, 0.2), 1.2)
    adv, ret = adr_py.compute_gae([1.5], [0.25], [False], last_value=2.0, gamma=0.9, gae_lambda=1.0)
    assert math.isclose(adv[0], 1.5 + 0.9 * 2.0 - 0.25)

    policy, log = adr_py.train(3, 512, seed=1, batch_size=256, minibatch_size=64, hidden=16, learning_rate=3e-4)
    assert log.count("\n") == 3
    scenario = adr_py.Scenario.generate(2, n_debris=3)
    env = adr_py.MissionEnv(scenario)
    p = policy.action_probabilities(env.observation(), env.action_mask())
    assert math.isclose(sum(p), 1.0)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "policy.json")
        policy.save(path)
        loaded = adr_py.Policy.load(path, n_debris=3)
        assert loaded.action_probabilities(env.observation(), env.action_mask()) == p
        try:
            adr_py.Policy.load(path, n_debris=4)
        except ValueError:
            pass
        else:
            raise AssertionError("mismatched debris count accepted")

    rows, summary = adr_py.evaluate(["RL_RL", "Greedy_Greedy"], 2, 2, n_debris=3, policy=policy)
    assert rows.count("\n") == 1 + 2 * 2 * 2
    print(summary, end="")


def check_oracle():
    scenario = adr_py.Scenario.generate(5, n_debris=4, collision_probability=0.0)
    best = adr_py.brute_force_oracle(scenario)
    assert best["episode_return"] == 4.0
    env = adr_py.MissionEnv(scenario)
    assert env.mcts_action(simulations=300, seed=1) in env.valid_actions()


if __name__ == "__main__":
    check_transfers()
    check_episode()
    check_policy_and_ppo()
    check_oracle()
    print("smoke test passed")
