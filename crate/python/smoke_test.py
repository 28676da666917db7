"""Smoke test for the `rollin` extension module.

Build and run from the repository root:

    cargo build --release -p rollin-py --features extension-module
    cp target/release/librollin.so python/rollin.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import rollin  # noqa: E402


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    # two states, action-independent dynamics: 0 -> 1, 1 -> {0, 1} evenly
    mdp = rollin.TabularMdp(
        transition=[[[0.0, 1.0], [0.0, 1.0]], [[0.5, 0.5], [0.5, 0.5]]],
        reward=[[1.0, 0.0], [0.0, 0.5]],
        discount=0.5,
        init_dist=[0.5, 0.5],
    )
    alpha = 0.1
    sol = rollin.soft_value_iteration(mdp, alpha)
    c0 = alpha * math.log(math.exp(1.0 / alpha) + 1.0)
    c1 = alpha * math.log(1.0 + math.exp(0.5 / alpha))
    v0 = (6.0 * c0 + 4.0 * c1) / 5.0
    assert close(sol["v_star"][0], v0, 1e-8), (sol["v_star"], v0)

    pi = sol["policy"]
    v = rollin.exact_policy_evaluation(mdp, pi, alpha)
    assert all(close(a, b, 1e-8) for a, b in zip(v, sol["v_star"]))

    d = rollin.visitation_distribution(mdp, pi)
    assert close(sum(d), 1.0, 1e-12)

    g = rollin.exact_gradient(mdp, pi, alpha)
    assert max(abs(x) for row in g for x in row) < 1e-8, g
    g = rollin.exact_gradient(mdp, rollin.SoftmaxPolicy(2, 2), alpha)
    assert all(close(sum(row), 0.0, 1e-12) for row in g)

    try:
        rollin.TabularMdp([[[0.7, 0.7]], [[0.0, 1.0]]], [[0.0], [0.0]], 1.0, [0.5, 0.5])
    except ValueError as e:
        assert "row sum" in str(e) and "discount" in str(e), e
    else:
        raise AssertionError("invalid MDP accepted")

    out = rollin.train_fourroom(seed=3, batch=16, steps=20, log_interval=10, exact_value=False)
    assert len(out["rows"]) == 2 and 0.0 <= out["final_kappa"] <= 1.0

    reports = rollin.run_suite("contraction", seed=1, instances=2, fourroom=False)
    assert reports and all(r["pass"] for r in reports)

    print("rollin smoke test ok:", mdp, "V*", [round(x, 6) for x in sol["v_star"]])


if __name__ == "__main__":
    main()
