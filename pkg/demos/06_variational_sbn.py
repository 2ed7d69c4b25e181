"""Fit a sigmoid belief network through its variational bound.

The model stacks binary latent layers over the observation; a bottom-up
inference network proposes latents, and the training cost log q(h|x) -
log p(x,h) averages to the negative bound. Everything discrete goes through
the gradient estimators, inference and generative weights train jointly.
"""
import numpy as np

from muprop import (
    build_sbn_variational,
    evaluate_nll,
    exact_expected_cost_and_grad,
    ExperimentConfig,
    init_params,
    run_experiment,
)
import shutil

model = build_sbn_variational("3-8")
g = model.graph
print("latent layers:", len(model.latents),
      "| inference tensors:", len(model.inference),
      "| generative tensors:", len(model.generative))

params = init_params(g, seed=0)
x = (np.arange(8) % 2).astype(float)
bound = -exact_expected_cost_and_grad(g, model.cost, {"x": x}, params).expected_cost
print(f"exact bound at initialization for one observation: {bound:.4f}")
print(f"Monte Carlo estimate of the same quantity: "
      f"{-evaluate_nll(model, params, x[None, :], n_samples=2000):.4f}\n")

print("training on the prototype mixture (density modeling):")
for estimator in ("muprop", "lr"):
    cfg = ExperimentConfig(
        task="variational",
        arch="3-8",
        estimator=estimator,
        flags=("c",),
        lr=0.1,
        momentum=0.9,
        batch_size=10,
        epochs=30,
        train_size=200,
        eval_size=64,
        eval_samples=50,
        seed=0,
        out_dir=f"runs/demo_sbn/{estimator}",
    )
    summary = run_experiment(cfg)
    print(f"  {estimator + ' + c':12s} negative bound "
          f"{summary['initial_eval_nll']:.3f} -> {summary['final_eval_nll']:.3f}"
          f"  ({summary['steps']} steps, {summary['train_seconds']}s)")

print("\nboth estimators tighten the bound on this small model; the payoff of the")
print("anchored form is lower gradient variance per draw (see demo 03), which")
print("matters more as the latent stack gets deeper.")
shutil.rmtree("runs/demo_sbn", ignore_errors=True)
