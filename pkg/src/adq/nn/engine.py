"""Forward/backward execution, loss, and the Adam update.

The engine is deterministic: given the same seed, architecture, and data it
reproduces weight trajectories bit-for-bit (single-threaded numpy, fixed
reduction orders, explicit RNG state).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from adq.errors import ConfigurationError, InputError, UsageError
from adq.nn import layers as L
from adq.nn.arch import NetworkArch

TRAINABLE = {
    "conv2d": ("w", "b"),
    "linear": ("w", "b"),
    "batchnorm": ("gamma", "beta"),
}


@dataclass
class TrainState:
    weights: dict  # layer id -> {name: ndarray}
    m: dict        # Adam first moments, mirrors trainable weights
    v: dict        # Adam second moments
    step: int
    epoch: int
    rng_seed: int
    rng: np.random.Generator

    def clone_arrays(self):
        return {
            lid: {k: a.copy() for k, a in params.items()}
            for lid, params in self.weights.items()
        }


def init_state(arch: NetworkArch, seed: int) -> TrainState:
    rng = np.random.Generator(np.random.PCG64(seed))
    weights, m, v = {}, {}, {}
    for spec in arch.layers:
        if spec.kind == "conv2d":
            fan_in = spec.in_channels * spec.kernel * spec.kernel
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                           (spec.out_channels, spec.in_channels,
                            spec.kernel, spec.kernel))
            weights[spec.id] = {"w": w, "b": np.zeros(spec.out_channels)}
        elif spec.kind == "linear":
            w = rng.normal(0.0, np.sqrt(2.0 / spec.in_channels),
                           (spec.out_channels, spec.in_channels))
            weights[spec.id] = {"w": w, "b": np.zeros(spec.out_channels)}
        elif spec.kind == "batchnorm":
            c = _bn_channels(arch, spec.id)
            weights[spec.id] = {
                "gamma": np.ones(c),
                "beta": np.zeros(c),
                "running_mean": np.zeros(c),
                "running_var": np.ones(c),
            }
    for lid, params in weights.items():
        kind = arch.layer(lid).kind
        m[lid] = {k: np.zeros_like(params[k]) for k in TRAINABLE.get(kind, ())}
        v[lid] = {k: np.zeros_like(params[k]) for k in TRAINABLE.get(kind, ())}
    return TrainState(weights=weights, m=m, v=v, step=0, epoch=0,
                      rng_seed=seed, rng=rng)


def _bn_channels(arch: NetworkArch, layer_id: int) -> int:
    shape = arch.infer_shapes()[layer_id]
    return shape[0] if len(shape) == 3 else shape[0]


@dataclass
class ForwardCache:
    arch_hash: str
    training: bool
    entries: dict = field(default_factory=dict)  # layer id -> per-layer cache
    outputs: dict = field(default_factory=dict)  # layer id -> output array
    batch: np.ndarray | None = None


def forward(arch: NetworkArch, state: TrainState, batch, hooks=(),
            quantizer=None, training=True, raw_observers=()):
    """Run the network on a batch.

    hooks: callables ``hook(layer_id, tensor)`` invoked exactly once per ReLU
    layer per call with the post-ReLU output. raw_observers: layer ids whose
    raw output is also reported to the hooks (used for weighted layers with
    no downstream ReLU).
    Returns (logits, cache); cache feeds backward().
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(arch.input_shape):
        raise ConfigurationError(
            f"batch shape {batch.shape} does not match input shape "
            f"(B, {', '.join(map(str, arch.input_shape))})"
        )
    cache = ForwardCache(arch_hash=arch.arch_hash(), training=training,
                         batch=batch)
    outputs = cache.outputs
    outputs[-1] = batch
    raw_observers = set(raw_observers)

    for spec in arch.layers:
        srcs = arch.input_ids(spec.id)
        entry = {"kind": spec.kind, "srcs": srcs}
        if spec.kind == "residual-add":
            main = outputs[srcs[0]]
            skip = outputs[srcs[1]]
            if quantizer is not None:
                skip, smask = quantizer.skip_activation(spec.id, skip)
                entry["skip_mask"] = smask
            out, _ = L.add_forward(main, skip)
        else:
            x = outputs[srcs[0]]
            if spec.kind in ("conv2d", "linear"):
                if quantizer is not None:
                    x, in_mask = quantizer.activation(spec.id, x)
                    entry["in_mask"] = in_mask
                params = state.weights[spec.id]
                w = params["w"]
                if quantizer is not None:
                    w, w_mask = quantizer.weight(spec.id, w)
                    entry["w_mask"] = w_mask
                if spec.kind == "conv2d":
                    out, kc = L.conv2d_forward(x, w, params["b"],
                                               spec.stride, spec.padding)
                else:
                    out, kc = L.linear_forward(x, w, params["b"])
                entry["cache"] = kc
            elif spec.kind == "relu":
                out, kc = L.relu_forward(x)
                entry["cache"] = kc
                for hook in hooks:
                    hook(spec.id, out)
            elif spec.kind == "maxpool":
                out, kc = L.maxpool_forward(x, spec.kernel, spec.stride)
                entry["cache"] = kc
            elif spec.kind == "avgpool":
                out, kc = L.avgpool_forward(x, spec.kernel, spec.stride)
                entry["cache"] = kc
            elif spec.kind == "flatten":
                out, kc = L.flatten_forward(x)
                entry["cache"] = kc
            elif spec.kind == "batchnorm":
                p = state.weights[spec.id]
                out, kc = L.batchnorm_forward(
                    x, p["gamma"], p["beta"],
                    p["running_mean"], p["running_var"], training)
                entry["cache"] = kc
            else:
                raise ConfigurationError(f"layer {spec.id}: unknown kind {spec.kind}")
        if spec.id in raw_observers:
            for hook in hooks:
                hook(spec.id, out)
        outputs[spec.id] = out
        cache.entries[spec.id] = entry

    logits = outputs[arch.layers[-1].id]
    return logits, cache


def backward(arch: NetworkArch, state: TrainState, cache: ForwardCache,
             loss_grad):
    """Backpropagate loss_grad through a cached forward pass.

    Returns {layer_id: {param: grad}} for every trainable layer. Gradients of
    quantized tensors pass through the straight-through masks captured at
    forward time.
    """
    if not isinstance(cache, ForwardCache) or not cache.entries:
        raise UsageError("backward needs the cache returned by forward()")
    if cache.arch_hash != arch.arch_hash():
        raise UsageError("cache was produced by a different architecture")

    gmap = {lid: None for lid in cache.outputs}
    gmap[arch.layers[-1].id] = np.asarray(loss_grad, dtype=np.float64)
    grads = {}

    def route(target, g):
        if gmap.get(target) is None:
            gmap[target] = g.copy()
        else:
            gmap[target] += g

    for spec in reversed(arch.layers):
        gout = gmap.get(spec.id)
        if gout is None:
            continue  # dead branch (no consumer contributed gradient)
        entry = cache.entries[spec.id]
        srcs = entry["srcs"]
        if spec.kind == "residual-add":
            gmain, gskip = L.add_backward(None, gout)
            smask = entry.get("skip_mask")
            if smask is not None:
                gskip = gskip * smask
            route(srcs[0], gmain)
            route(srcs[1], gskip)
            continue
        if spec.kind in ("conv2d", "linear"):
            bwd = L.conv2d_backward if spec.kind == "conv2d" else L.linear_backward
            gin, pg = bwd(entry["cache"], gout)
            wmask = entry.get("w_mask")
            if wmask is not None:
                pg["w"] = pg["w"] * wmask
            inmask = entry.get("in_mask")
            if inmask is not None:
                gin = gin * inmask
            grads[spec.id] = pg
        elif spec.kind == "relu":
            gin, _ = L.relu_backward(entry["cache"], gout)
        elif spec.kind == "maxpool":
            gin, _ = L.maxpool_backward(entry["cache"], gout)
        elif spec.kind == "avgpool":
            gin, _ = L.avgpool_backward(entry["cache"], gout)
        elif spec.kind == "flatten":
            gin, _ = L.flatten_backward(entry["cache"], gout)
        elif spec.kind == "batchnorm":
            gin, pg = L.batchnorm_backward(entry["cache"], gout)
            grads[spec.id] = pg
        route(srcs[0], gin)

    return grads, gmap.get(-1)


def loss_softmax_xent(logits, labels):
    """Mean softmax cross-entropy. Returns (loss, grad wrt logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise InputError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


@dataclass
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


def optimizer_step(state: TrainState, grads: dict, config: OptimConfig):
    """One Adam step with bias correction, applied in place."""
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for lid, pg in grads.items():
        params = state.weights[lid]
        for name, g in pg.items():
            if g.shape != params[name].shape:
                raise InputError(
                    f"layer {lid}: gradient shape {g.shape} != weight shape "
                    f"{params[name].shape}"
                )
            if config.weight_decay:
                g = g + config.weight_decay * params[name]
            m = state.m[lid][name]
            v = state.v[lid][name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / c1
            vhat = v / c2
            params[name] -= config.lr * mhat / (np.sqrt(vhat) + config.eps)
    return state


def predict(arch, state, x, quantizer=None, batch_size=256):
    """Class predictions in evaluation mode."""
    outs = []
    was_training = getattr(quantizer, "training", None)
    if quantizer is not None:
        quantizer.training = False
    try:
        for i in range(0, len(x), batch_size):
            logits, _ = forward(arch, state, x[i:i + batch_size],
                                quantizer=quantizer, training=False)
            outs.append(np.argmax(logits, axis=1))
    finally:
        if quantizer is not None and was_training is not None:
            quantizer.training = was_training
    return np.concatenate(outs) if outs else np.empty(0, dtype=int)


def accuracy(arch, state, x, y, quantizer=None, batch_size=256):
    return float(np.mean(predict(arch, state, x, quantizer, batch_size) == y))
