"""Pluggable strategies for how each layer's matrix products are computed.

Column-selection policies (dropout, adaptive dropout, hash-based active-node
selection) compute pre-activations only for a selected subset of a hidden
layer's nodes and treat the rest as exactly zero for the step; gradients flow
only through selected nodes. The Monte-Carlo policy runs the forward pass
exactly and replaces each backprop matrix product with a Bernoulli-sampled
estimate. The output layer is always computed exactly under every policy.

FLOP accounting: masked hidden-layer products are charged 2 * fan_in per
computed entry (skipped columns cost nothing); products touching the output
layer are charged in full; selection work (hash probes, mask-building
products, sampling-probability norms) is charged to the policy-overhead
tally as well as the global counter.
"""

from __future__ import annotations

import numpy as np

from . import alsh as alsh_mod
from . import mc as mc_mod
from . import nn
from .errors import ParameterError
from .linalg import FLOPS, matmul, stream


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def adaptive_keep_probs(pre_activation, alpha, beta) -> np.ndarray:
    """Per-node keep probability sigmoid(alpha*z + beta), clamped to [0.01, 1]."""
    z = np.asarray(pre_activation, dtype=np.float64)
    return np.clip(_stable_sigmoid(alpha * z + beta), 0.01, 1.0)


class ComputePolicy:
    """Exact computation; base class that the sampling policies override."""

    name = "exact"

    def __init__(self):
        self._bound = False
        self._rng = None
        self.reset_stats()

    def reset_stats(self):
        self.overhead_flops = 0
        self.sampled_product_flops = 0
        self.replaced_exact_flops = 0
        self.fallback_events = 0
        self.active_fraction_sum = 0.0
        self.active_queries = 0

    def bind(self, model: nn.MlpModel, seed: int = 0):
        """Attach to one training run; resets per-run state."""
        self._rng = stream(seed, "policy", self.name)
        self._bound = True
        self.reset_stats()

    def ensure_bound(self, model, seed=0):
        if not self._bound:
            self.bind(model, seed)

    def describe(self) -> dict:
        return {"kind": self.name}

    @property
    def mean_active_fraction(self):
        if self.active_queries == 0:
            return None
        return self.active_fraction_sum / self.active_queries

    # -- hooks -------------------------------------------------------------

    def forward(self, model, x, rng=None) -> nn.ForwardTrace:
        return nn.forward(model, x)

    def backward(self, model, trace, targets, rng=None) -> nn.Gradients:
        return nn.backward(model, trace, targets)

    def infer_log_probs(self, model, x) -> np.ndarray:
        """Prediction-time forward; policies that only alter training fall
        back to the exact network here."""
        return nn.forward(model, x).output

    def on_samples_seen(self, model, samples_seen):
        pass


class ExactPolicy(ComputePolicy):
    pass


# ---------------------------------------------------------------------------
# Shared masked forward/backward for column-selection policies.
#
# masks[k] is a boolean (batch, width) array over the output nodes of hidden
# layer k; scales[k] carries the inverted-keep-probability correction (1.0
# when the policy does not rescale).
# ---------------------------------------------------------------------------


class _ColumnPolicy(ComputePolicy):
    def _layer_mask(self, model, k, a_prev, rng):
        """Return (mask, scale, z) for hidden layer k. z is None when the mask
        is chosen before the product, which is then computed only where kept."""
        raise NotImplementedError

    def forward(self, model, x, rng=None):
        rng = rng if rng is not None else self._rng
        a = nn._as_batch(x, model.n_inputs)
        batch = a.shape[0]
        pre, acts = [], [a]
        masks, scales = [], []
        for k in range(model.n_layers):
            w, b = model.weights[k], model.biases[k]
            if k == model.n_layers - 1:
                z = matmul(a, w) + b
                a = nn.log_softmax(z)
            else:
                mask, scale, z = self._layer_mask(model, k, a, rng)
                if z is None:
                    z = np.where(mask, a @ w + b, 0.0)
                    FLOPS.add(2 * w.shape[0] * int(mask.sum()))
                act = nn.apply_hidden(z, model.hidden_activation)
                a = np.where(mask, act * scale, 0.0)
                masks.append(mask)
                scales.append(scale)
                self.active_fraction_sum += mask.mean(axis=1).sum()
                self.active_queries += batch
            pre.append(z)
            acts.append(a)
        self._step_masks = masks
        self._step_scales = scales
        return nn.ForwardTrace(pre, acts)

    def backward(self, model, trace, targets, rng=None):
        masks, scales = self._step_masks, self._step_scales
        delta = nn.output_delta(trace, targets)
        grads_w = [None] * model.n_layers
        grads_b = [None] * model.n_layers
        for k in range(model.n_layers - 1, -1, -1):
            a_prev = trace.activations[k]
            if k == model.n_layers - 1:
                grads_w[k] = matmul(a_prev.T, delta)
            else:
                kept = int(masks[k].sum())
                fan_in = model.weights[k].shape[0]
                FLOPS.add(2 * fan_in * kept)  # weight-gradient columns
                FLOPS.add(2 * kept * fan_in)  # delta propagation rows
                grads_w[k] = a_prev.T @ delta
            grads_b[k] = delta.sum(axis=0)
            if k > 0:
                upstream = (matmul(delta, model.weights[k].T)
                            if k == model.n_layers - 1
                            else delta @ model.weights[k].T)
                deriv = nn.hidden_derivative(trace.pre_activations[k - 1],
                                             model.hidden_activation)
                delta = upstream * deriv * scales[k - 1]
                delta[~masks[k - 1]] = 0.0
        return nn.Gradients(grads_w, grads_b)


class DropoutPolicy(_ColumnPolicy):
    """Uniform node selection with keep probability p_keep, inverted scaling
    at train time so inference needs none."""

    name = "dropout"

    def __init__(self, p_keep=0.05):
        super().__init__()
        if not 0.0 < p_keep <= 1.0:
            raise ParameterError(f"p_keep must be in (0,1], got {p_keep}")
        self.p_keep = float(p_keep)

    def describe(self):
        return {"kind": self.name, "p_keep": self.p_keep}

    def _layer_mask(self, model, k, a_prev, rng):
        width = model.layer_dims[k + 1]
        mask = rng.random((a_prev.shape[0], width)) < self.p_keep
        return mask, 1.0 / self.p_keep, None


class AdaptiveDropoutPolicy(_ColumnPolicy):
    """Standout-style dropout: keep probabilities from the layer's own
    pre-activations (shared weights), sampled per node per sample.

    Building the mask needs the full pre-activation, so the full product is
    computed; the kept share is charged as forward work and the remainder,
    plus the sigmoid pass, as policy overhead.
    """

    name = "adaptive_dropout"

    def __init__(self, alpha=1.0, beta=0.0):
        super().__init__()
        self.alpha = float(alpha)
        self.beta = float(beta)

    def describe(self):
        return {"kind": self.name, "alpha": self.alpha, "beta": self.beta}

    def _layer_mask(self, model, k, a_prev, rng):
        w, b = model.weights[k], model.biases[k]
        z = a_prev @ w + b
        full_cost = 2 * w.shape[0] * z.size
        probs = adaptive_keep_probs(z, self.alpha, self.beta)
        mask = rng.random(z.shape) < probs
        kept_cost = 2 * w.shape[0] * int(mask.sum())
        FLOPS.add(full_cost + 4 * z.size)
        self.overhead_flops += full_cost - kept_cost + 4 * z.size
        scale = np.where(mask, 1.0 / probs, 1.0)
        return mask, scale, z


class AlshPolicy(_ColumnPolicy):
    """Active-node selection by asymmetric-LSH maximum inner-product search.

    One index per hidden layer over the columns of that layer's weight matrix.
    Kept activations are not rescaled (skipped contributions are modeled as
    omitted, not as a thinned expectation). An empty probe falls back to the
    exact column set for that sample and layer.
    """

    name = "alsh"

    def __init__(self, params: alsh_mod.AlshParams | None = None):
        super().__init__()
        self.params = params or alsh_mod.AlshParams()
        self.indexes = []
        self._samples_seen = 0
        self.rebuild_count = 0

    def describe(self):
        p = self.params
        return {"kind": self.name, "K": p.bits, "L": p.tables,
                "m": p.pad_terms, "C": p.norm_bound}

    def bind(self, model, seed=0):
        super().bind(model, seed)
        self._samples_seen = 0
        self.rebuild_count = 0
        self.indexes = []
        for k in range(model.n_layers - 1):
            layer_seed = int(stream(seed, "alsh-layer", k).integers(0, 2**63))
            self.indexes.append(
                alsh_mod.build_index(model.weights[k].T, self.params, layer_seed))

    def rebuild(self, model):
        before = FLOPS.value()
        self.indexes = [alsh_mod.rebuild_index(idx, model.weights[k].T)
                        for k, idx in enumerate(self.indexes)]
        self.overhead_flops += FLOPS.value() - before
        self.rebuild_count += 1

    def on_samples_seen(self, model, samples_seen):
        # a batch may jump past a cadence boundary; rebuild at most once per call
        for s in range(self._samples_seen + 1, samples_seen + 1):
            if alsh_mod.rebuild_schedule(s):
                self.rebuild(model)
                break
        self._samples_seen = samples_seen

    def _layer_mask(self, model, k, a_prev, rng):
        width = self.indexes[k].n_columns
        mask = np.zeros((a_prev.shape[0], width), dtype=bool)
        before = FLOPS.value()
        for row in range(a_prev.shape[0]):
            active = alsh_mod.query_active(self.indexes[k], a_prev[row])
            if active.empty:
                self.fallback_events += 1
                mask[row, :] = True
            else:
                mask[row, active.node_ids] = True
        self.overhead_flops += FLOPS.value() - before
        return mask, 1.0, None

    # prediction uses the exact network (same convention as dropout): the
    # trained weights are the deliverable, and per-sample selection noise at
    # inference would mask how concentrated the trained function really is


class McBackpropPolicy(ComputePolicy):
    """Exact forward; every backprop matrix product is Bernoulli-sampled.

    The propagated-delta product samples over the current layer's width; the
    weight-gradient product samples over the batch dimension, so with batch
    size 1 it degenerates to the exact product. Keep probabilities follow the
    clipped norm-product rule, recomputed per batch per product; the norm
    passes are charged to policy overhead.
    """

    name = "mc"

    def __init__(self, k_samples=10):
        super().__init__()
        if k_samples < 1:
            raise ParameterError("k_samples must be at least 1")
        self.k_samples = int(k_samples)

    def describe(self):
        return {"kind": self.name, "k_samples": self.k_samples}

    def bind(self, model, seed=0):
        for width in model.layer_dims[1:-1]:
            if self.k_samples > width:
                raise ParameterError(
                    f"k_samples={self.k_samples} exceeds hidden width {width}")
        super().bind(model, seed)

    def _sampled_product(self, a, b, rng):
        shared = a.shape[1]
        k_eff = min(self.k_samples, shared)
        before = FLOPS.value()
        probs = mc_mod.optimal_probs_bernoulli(a, b, k_eff)
        self.overhead_flops += FLOPS.value() - before
        estimate, plan = mc_mod.approx_matmul_bernoulli(a, b, k_eff, rng, probs=probs)
        self.sampled_product_flops += 2 * a.shape[0] * plan.indices.size * b.shape[1]
        self.replaced_exact_flops += 2 * a.shape[0] * shared * b.shape[1]
        return estimate

    def backward(self, model, trace, targets, rng=None):
        rng = rng if rng is not None else self._rng
        delta = nn.output_delta(trace, targets)
        grads_w = [None] * model.n_layers
        grads_b = [None] * model.n_layers
        for k in range(model.n_layers - 1, -1, -1):
            a_prev = trace.activations[k]
            grads_w[k] = self._sampled_product(a_prev.T, delta, rng)
            grads_b[k] = delta.sum(axis=0)
            if k > 0:
                upstream = self._sampled_product(delta, model.weights[k].T, rng)
                delta = upstream * nn.hidden_derivative(
                    trace.pre_activations[k - 1], model.hidden_activation)
        return nn.Gradients(grads_w, grads_b)


# ---------------------------------------------------------------------------
# Module-level entry points.
# ---------------------------------------------------------------------------


def forward_with_policy(model, x, policy: ComputePolicy, rng=None) -> nn.ForwardTrace:
    policy.ensure_bound(model)
    return policy.forward(model, x, rng)


def backward_with_policy(model, trace, targets, policy: ComputePolicy,
                         rng=None) -> nn.Gradients:
    return policy.backward(model, trace, targets, rng)


def rebuild_if_due(policy: ComputePolicy, model, samples_seen: int):
    policy.on_samples_seen(model, samples_seen)


_POLICY_DEFAULTS = {
    "exact": (),
    "dropout": ("p_keep",),
    "adaptive_dropout": ("alpha", "beta"),
    "alsh": ("K", "L", "m", "C"),
    "mc": ("k_samples",),
}


def make_policy(kind: str, **params) -> ComputePolicy:
    """Config-level factory; unknown kinds or parameters raise ParameterError."""
    kind = kind.lower()
    if kind not in _POLICY_DEFAULTS:
        raise ParameterError(f"unknown policy kind {kind!r}")
    extra = set(params) - set(_POLICY_DEFAULTS[kind])
    if extra:
        raise ParameterError(f"unknown parameters for policy {kind!r}: {sorted(extra)}")
    if kind == "exact":
        return ExactPolicy()
    if kind == "dropout":
        return DropoutPolicy(p_keep=params.get("p_keep", 0.05))
    if kind == "adaptive_dropout":
        return AdaptiveDropoutPolicy(alpha=params.get("alpha", 1.0),
                                     beta=params.get("beta", 0.0))
    if kind == "alsh":
        alsh_params = alsh_mod.AlshParams(
            bits=params.get("K", 6), tables=params.get("L", 5),
            pad_terms=params.get("m", 3), norm_bound=params.get("C", 0.83))
        return AlshPolicy(alsh_params)
    return McBackpropPolicy(k_samples=params.get("k_samples", 10))
