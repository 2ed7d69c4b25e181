"""Model builders: structured output prediction and sigmoid belief networks.

Architectures are given as strings like "392-200-200-392" (dims separated by
dashes). A hidden token "200x10" means 200 categorical units over 10 choices;
plain hidden tokens are Bernoulli layers. Builders return graphs whose `meta`
records the input/target/cost handles the training loop needs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .graph import Graph, Mode, forward
from .numerics import log_mean_exp


@dataclass(frozen=True)
class ArchToken:
    units: int
    k: int = 0  # 0 = plain width or Bernoulli layer; >0 = categorical

    @property
    def width(self) -> int:
        return self.units * self.k if self.k else self.units


def parse_arch(text: str) -> tuple[ArchToken, ...]:
    toks = []
    for part in text.strip().split("-"):
        if "x" in part:
            u, _, k = part.partition("x")
            tok = ArchToken(int(u), int(k))
            if tok.k < 2:
                raise ValueError(f"categorical token {part!r} needs k >= 2")
        else:
            tok = ArchToken(int(part))
        if tok.units < 1:
            raise ValueError(f"bad layer size in {text!r}")
        toks.append(tok)
    if len(toks) < 2:
        raise ValueError(f"architecture {text!r} needs at least two layers")
    return tuple(toks)


def _stochastic_layer(g: Graph, h, tok: ArchToken, w, b):
    logits = g.affine(h, w, b)
    if tok.k:
        return g.categorical(logits, k=tok.k)
    return g.bernoulli(logits)


def _bernoulli_logp(g: Graph, value, logits):
    # sum(v * l) - sum(softplus(l)), scalar
    return g.sub(g.sum(g.mul(value, logits)), g.sum(g.softplus(logits)))


def _categorical_logp(g: Graph, value, logits, k: int):
    return g.sub(g.sum(g.mul(value, logits)), g.sum(g.logsumexp(logits, k=k)))


def build_structured_predictor(arch: str, m: int = 1) -> Graph:
    """Predict the target half from the input half through stochastic layers.

    The cost is -log((1/m) sum_s p(y | h_s)) with the average taken inside the
    graph over m independent hidden configurations sharing one set of weights.
    """
    if m < 1:
        raise ValueError("need m >= 1 samples")
    toks = parse_arch(arch)
    if toks[0].k or toks[-1].k:
        raise ValueError("input and output widths must be plain sizes")
    in_dim, out_dim = toks[0].units, toks[-1].units
    hidden = toks[1:-1]
    if not hidden:
        raise ValueError("need at least one stochastic hidden layer")

    g = Graph()
    x = g.input((in_dim,), "x")
    y = g.input((out_dim,), "y")
    layer_params = []
    prev_w = in_dim
    for li, tok in enumerate(hidden):
        w = g.parameter((tok.width, prev_w), f"w{li}")
        b = g.parameter((tok.width,), f"b{li}", init="zeros")
        layer_params.append((w, b))
        prev_w = tok.width
    w_out = g.parameter((out_dim, prev_w), "w_out")
    b_out = g.parameter((out_dim,), "b_out", init="zeros")

    logps = []
    hiddens = []
    for _ in range(m):
        h = x
        for tok, (w, b) in zip(hidden, layer_params):
            h = _stochastic_layer(g, h, tok, w, b)
        hiddens.append(h)
        ylogits = g.affine(h, w_out, b_out)
        logps.append(_bernoulli_logp(g, y, ylogits))

    stack = g.concat(*logps)
    lse = g.sum(g.logsumexp(stack, k=m))
    cost = g.cost(g.sub(g.constant(math.log(m), "log_m"), lse))
    g.meta.update(
        task="structured_prediction",
        arch=arch,
        input="x",
        target="y",
        cost=cost,
        logp_nodes=tuple(logps),
        hidden_nodes=tuple(hiddens),
        m=m,
        idb_input="x",
    )
    return g


@dataclass(frozen=True)
class VariationalModel:
    graph: Graph
    cost: int
    observation: int
    latents: tuple
    generative: tuple  # parameter ids of p
    inference: tuple  # parameter ids of q


def build_sbn_variational(arch: str) -> VariationalModel:
    """Layered belief net trained through its variational bound.

    `arch` lists latent layers top-down with the observation width last, e.g.
    "200-200-784". Inference runs bottom-up from the observation, one stochastic
    layer per latent; the generative side scores the sampled latents top-down
    from a learned prior. The cost is log q(h|x) - log p(x,h), whose expectation
    under q is the negative bound.
    """
    toks = parse_arch(arch)
    if toks[-1].k:
        raise ValueError("observation width must be a plain size")
    obs_dim = toks[-1].units
    latent_toks = toks[:-1]  # top-down
    if not latent_toks:
        raise ValueError("need at least one latent layer")

    g = Graph()
    x = g.input((obs_dim,), "x")

    # inference: bottom-up, h1 from x, h2 from h1, ...
    bottom_up = list(reversed(latent_toks))
    latents = []
    q_terms = []
    inference = []
    h = x
    prev_w = obs_dim
    for li, tok in enumerate(bottom_up):
        w = g.parameter((tok.width, prev_w), f"q_w{li}")
        b = g.parameter((tok.width,), f"q_b{li}", init="zeros")
        inference += [w, b]
        logits = g.affine(h, w, b)
        h = g.categorical(logits, k=tok.k) if tok.k else g.bernoulli(logits)
        latents.append(h)
        if tok.k:
            q_terms.append(_categorical_logp(g, h, logits, tok.k))
        else:
            q_terms.append(_bernoulli_logp(g, h, logits))
        prev_w = tok.width

    # generative: prior over the top latent, then top-down conditionals, then x
    top_tok = bottom_up[-1]
    prior = g.parameter((top_tok.width,), "p_prior", init="zeros")
    generative = [prior]
    if top_tok.k:
        p_terms = [_categorical_logp(g, latents[-1], prior, top_tok.k)]
    else:
        p_terms = [_bernoulli_logp(g, latents[-1], prior)]
    for li in range(len(bottom_up) - 1, 0, -1):
        above, below = bottom_up[li], bottom_up[li - 1]
        w = g.parameter((below.width, above.width), f"p_w{li}")
        b = g.parameter((below.width,), f"p_b{li}", init="zeros")
        generative += [w, b]
        logits = g.affine(latents[li], w, b)
        if below.k:
            p_terms.append(_categorical_logp(g, latents[li - 1], logits, below.k))
        else:
            p_terms.append(_bernoulli_logp(g, latents[li - 1], logits))
    w = g.parameter((obs_dim, bottom_up[0].width), "p_w0")
    b = g.parameter((obs_dim,), "p_b0", init="zeros")
    generative += [w, b]
    p_terms.append(_bernoulli_logp(g, x, g.affine(latents[0], w, b)))

    total_q = q_terms[0]
    for t in q_terms[1:]:
        total_q = g.add(total_q, t)
    total_p = p_terms[0]
    for t in p_terms[1:]:
        total_p = g.add(total_p, t)
    bound = g.sub(total_p, total_q)
    cost = g.cost(g.sub(total_q, total_p))
    g.meta.update(
        task="variational",
        arch=arch,
        input="x",
        cost=cost,
        bound_node=bound,
        latent_nodes=tuple(latents),
        idb_input="x",
    )
    return VariationalModel(
        graph=g,
        cost=cost,
        observation=g.node_id("x"),
        latents=tuple(latents),
        generative=tuple(generative),
        inference=tuple(inference),
    )


def init_params(graph: Graph, seed: int) -> dict[str, np.ndarray]:
    """Fan-in-scaled uniform weights, zeros elsewhere, keyed by parameter name."""
    out = {}
    for pid in graph.param_ids:
        node = graph.nodes[pid]
        key = node.name if node.name else pid
        if node.init == "zeros":
            out[key] = np.zeros(node.shape)
        else:
            scale = 1.0 / math.sqrt(max(1, node.fan_in))
            out[key] = _rng.stream(seed, pid).uniform(-scale, scale, node.shape)
    return out


def evaluate_nll(
    graph_or_model,
    params,
    data,
    n_samples: int = 100,
    seed: int = 0,
) -> float:
    """Average per-example negative log likelihood estimate over a dataset.

    Structured prediction: importance-free multi-sample estimate
    -log((1/S) sum_s p(y|h_s)) with S = `n_samples` hidden draws. Variational
    models: the Monte Carlo average of the negative bound.
    """
    graph = graph_or_model.graph if isinstance(graph_or_model, VariationalModel) else graph_or_model
    task = graph.meta["task"]
    cost = graph.meta["cost"]
    if n_samples < 1:
        raise ValueError("need at least one evaluation sample")

    if task == "structured_prediction":
        X, Y = data
        if len(X) == 0:
            raise ValueError("empty evaluation set")
        logp_nodes = list(graph.meta["logp_nodes"])
        m = len(logp_nodes)
        rounds = -(-n_samples // m)
        total = 0.0
        for i in range(len(X)):
            vals = []
            for r in range(rounds):
                tr = forward(
                    graph,
                    {"x": X[i], "y": Y[i]},
                    params,
                    mode=Mode.STOCHASTIC,
                    rng_seed=_rng.fold(seed, i, r),
                    validate=False,
                )
                vals.extend(float(tr.values[n]) for n in logp_nodes)
            total += -log_mean_exp(np.array(vals[:n_samples]))
        return total / len(X)

    X = data[0] if isinstance(data, tuple) else data
    if len(X) == 0:
        raise ValueError("empty evaluation set")
    total = 0.0
    for i in range(len(X)):
        acc = 0.0
        for s in range(n_samples):
            tr = forward(
                graph,
                {"x": X[i]},
                params,
                mode=Mode.STOCHASTIC,
                rng_seed=_rng.fold(seed, i, s),
                validate=False,
            )
            acc += tr.cost_value(cost)
        total += acc / n_samples
    return total / len(X)
