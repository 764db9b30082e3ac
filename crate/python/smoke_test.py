"""Smoke test for the entangle_ot_py extension.

Build and install first:

    pip install --no-build-isolation -e crates/python
    python python/smoke_test.py
"""

import math

import entangle_ot_py as eot


def check_wasserstein():
    x = [[0.0, 0.0], [1.0, 0.0]]
    assert eot.wasserstein(x, [0.5, 0.5], x, [0.5, 0.5]) == 0.0
    d = eot.wasserstein([[0.0, 0.0]], [1.0], [[3.0, 4.0]], [1.0])
    assert abs(d - 5.0) < 1e-12, d
    d2 = eot.wasserstein([[0.0, 0.0]], [1.0], [[3.0, 4.0]], [1.0], ground="squared_euclidean")
    assert abs(d2 - 25.0) < 1e-12, d2
    plan, obj = eot.transport_plan([0.5, 0.5], [0.5, 0.5], [[0.0, 1.0], [1.0, 0.0]])
    assert obj == 0.0 and plan[0][0] == 0.5, (plan, obj)
    approx = eot.wasserstein(x, [0.5, 0.5], [[0.0, 1.0], [1.0, 1.0]], [0.5, 0.5], method="sinkhorn", epsilon=0.01)
    assert abs(approx - 1.0) < 1e-2, approx


def check_scenario_and_training():
    config = {
        "kind": {"type": "label_shift", "source_weights": [0.5, 0.5], "target_weights": [0.2, 0.8]},
        "classes": 2,
        "points_per_domain": 200,
        "input_dim": 2,
        "seed": 3,
    }
    s = eot.generate_scenario(config)
    assert len(s.source) == 200 and s.source.num_classes == 2
    assert s.stages is None
    assert abs(sum(s.target.class_masses()) - 1.0) < 1e-12

    train = {
        "objective": {"type": "wrr"},
        "loss": "euclidean",
        "model": {"type": "mlp", "hidden": 8, "activation": "tanh"},
        "lr": 0.01,
        "epochs": 3,
        "ot_method": "exact",
        "seed": 1,
    }
    model, history, diverged = eot.fit(s.source, s.target, train)
    assert diverged is None
    assert [h["epoch"] for h in history] == [1, 2, 3], history
    assert history[-1]["src_acc"] > 0.9, history[-1]
    again, history2, _ = eot.fit(s.source, s.target, train)
    assert history == history2 and model.params == again.params

    restored = eot.Model.from_json(model.to_json())
    assert restored.predict([[0.5, -0.5]]) == model.predict([[0.5, -0.5]])
    probs = model.predict(s.target.inputs[:5])
    assert all(abs(sum(p) - 1.0) < 1e-12 for p in probs)

    report = eot.entanglement_report(s.source, s.target, model)
    assert abs(report["oub"] - report["wrr"] - report["label_entanglement"]) < 1e-12, report
    assert report["target_risk"] <= report["oub"] + 1e-7, report

    checks = eot.verify(s.source, s.target, model)
    assert checks, "no reports"
    failed = [c for c in checks if c["status"] == "failed"]
    assert not failed, failed


def check_gaussian():
    sigma = [[2.0, 0.3], [0.3, 1.0]]
    assert abs(eot.gaussian_w2([0.0, 0.0], sigma, [3.0, 4.0], sigma) - 25.0) < 1e-9
    scaled = [[4.0 * v for v in row] for row in sigma]
    expected = (2.0 - 1.0) ** 2 * 3.0
    assert abs(eot.gaussian_w2([0.0, 0.0], sigma, [0.0, 0.0], scaled) - expected) < 1e-9
    pair = {
        "mu": [0.0, 1.0, 0.0, -1.0],
        "mu_prime": [1.0, 0.0, 2.0, 0.5],
        "sigma": [[2.0, 0.3, 0.1, 0.0], [0.3, 1.0, 0.2, 0.1], [0.1, 0.2, 1.5, 0.4], [0.0, 0.1, 0.4, 0.8]],
        "scale": 1.5,
        "dim_x": 2,
    }
    r = eot.gaussian_decomposition(pair, samples=20000, seed=2)
    assert r["status"] == "passed", r


def check_errors():
    try:
        eot.wasserstein([[0.0]], [-1.0], [[0.0]], [1.0])
    except ValueError:
        pass
    else:
        raise AssertionError("negative weight accepted")
    try:
        eot.generate_scenario({"classes": 2})
    except ValueError:
        pass
    else:
        raise AssertionError("incomplete config accepted")
    try:
        eot.gaussian_w2([0.0], [[-1.0]], [0.0], [[1.0]])
    except eot.SolverError:
        pass
    else:
        raise AssertionError("indefinite covariance accepted")
    assert math.isfinite(eot.wasserstein([[0.0]], [1.0], [[1.0]], [1.0], alpha=2.0))


if __name__ == "__main__":
    check_wasserstein()
    check_scenario_and_training()
    check_gaussian()
    check_errors()
    print("smoke test passed")
