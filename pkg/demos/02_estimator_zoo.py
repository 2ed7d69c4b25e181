"""Compare every gradient estimator on one binary unit.

A single Bernoulli unit at logit 0 with cost x**3 is small enough to
enumerate, so each estimator's exact expectation is two weighted terms. The
unbiased ones land on the true gradient; the cheap deterministic-substitute
ones land visibly elsewhere.
"""
import numpy as np

from muprop import (
    EstimatorConfig,
    Graph,
    estimate,
    estimator_expectation,
    exact_expected_cost_and_grad,
)

g = Graph()
th = g.parameter((), "th", init="zeros")
h = g.bernoulli(g.concat(th))
y = g.sum(h)
cost = g.cost(g.mul(g.mul(y, y), y))  # x**3: linear in x on {0,1}, so E = p
params = {"th": np.zeros(())}

exact = exact_expected_cost_and_grad(g, cost, params=params)
print(f"exact: E[cost] = {exact.expected_cost:.4f}, "
      f"d/d logit = {float(exact.grads[th]):.4f}\n")

print("per-draw estimates with the outcome pinned to x=1 and x=0:")
sid = g.stochastic_ids[0]
for name in ("lr", "muprop", "muprop_rollout", "st", "half"):
    draws = []
    for xval in (1.0, 0.0):
        est = estimate(EstimatorConfig(name), g, cost, None, params, None,
                       forced={sid: np.array([xval])})
        draws.append(float(est.grads[th]))
    mean = 0.5 * draws[0] + 0.5 * draws[1]
    print(f"  {name:16s} x=1: {draws[0]:+.4f}   x=0: {draws[1]:+.4f}   "
          f"average: {mean:+.4f}")

print("\nexpectations by enumeration (the oracle does the weighting):")
for name in ("lr", "muprop", "muprop_rollout", "st", "half"):
    got = estimator_expectation(EstimatorConfig(name), g, cost, params=params)
    err = abs(float(got[th]) - float(exact.grads[th]))
    tag = "unbiased" if err < 1e-12 else f"bias {err:+.4f}"
    print(f"  {name:16s} {float(got[th]):+.6f}   ({tag})")

print("\nthe score-function and anchored estimators stay unbiased at any logit:")
for logit in (-1.5, 0.7):
    p = {"th": np.asarray(logit)}
    want = float(exact_expected_cost_and_grad(g, cost, params=p).grads[th])
    row = [f"exact {want:+.6f}"]
    for name in ("lr", "muprop"):
        got = float(estimator_expectation(EstimatorConfig(name), g, cost, params=p)[th])
        row.append(f"{name} {got:+.6f}")
    print(f"  logit {logit:+.1f}: " + "   ".join(row))
