"""Smoke test for the `jumpflow` extension module.

Build and install first:
    pip install --no-build-isolation -e crates/python
then run:
    python python/smoke_test.py
"""

import math

import jumpflow


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    assert "toy3" in jumpflow.env_names()

    env = jumpflow.Env("toy3", seed=1)
    obs = env.reset()
    assert len(obs) == env.obs_dim and sum(obs) == 1.0
    obs2, reward, done, truncated, goal = env.step(0)
    assert len(obs2) == env.obs_dim and isinstance(reward, float)

    # Bridge marginal and coupling rates on a 3-action problem.
    p0 = [1 / 3] * 3
    target = [0.7, 0.2, 0.1]
    pt = jumpflow.bridge_marginal(p0, target, 0.5)
    assert all(close(x, 0.5 * a + 0.5 * b) for x, a, b in zip(pt, p0, target))
    rates = jumpflow.coupling_rates(p0, target, 0.5, 2)
    assert rates[2] == 0.0 and rates[0] > 0.0 and rates[1] == 0.0
    assert jumpflow.coupling_rates(p0, target, 0.5, 0) == [0.0, 0.0, 0.0]

    net = jumpflow.RateNetwork(env.obs_dim, env.actions, hidden=[16], seed=0)
    r = net.rates(obs, 0, 0.3)
    assert len(r) == env.actions and r[0] == 0.0 and all(x > 0 and math.isfinite(x) for x in r[1:])
    path = net.sample_path(obs, substeps=8, seed=4)
    assert len(path) == 9 and all(0 <= a < env.actions for a in path)
    assert net.sample_action(obs, substeps=8, seed=4) == path[-1]

    ok, report = jumpflow.check_theory("kl", trials=500, seed=0)
    assert ok, report

    cfg = jumpflow.default_config("toy3")
    assert 'env = "toy3"' in cfg
    small = (
        'env = "toy3"\n[budget]\nonline_steps = 100\ncritic_pretrain_steps = 50\n'
        "generator_pretrain_steps = 20\neval_episodes = 4\n"
    )
    out = jumpflow.run_flow(small)
    assert math.isfinite(out["final_return"]) and len(out["goal_visits"]) == 3
    out = jumpflow.run_dqn(small)
    assert math.isfinite(out["final_return"])

    try:
        jumpflow.Env("toy9")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown env accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
