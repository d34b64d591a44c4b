"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np

from .layers import MaxPool, ReLU
from .model import Model


def rel_error(a, n):
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def _gate_state(layers):
    # activation pattern of every non-smooth layer from the latest forward
    state = []
    for layer in layers:
        if isinstance(layer, ReLU):
            state.append(layer._cache.copy())
        elif isinstance(layer, MaxPool):
            state.append(layer._cache[1].copy())
    return state


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def _check(forward_for, backward, params, inputs, gated_layers, eps, rng):
    """Shared driver: squared loss against a random target.

    ``forward_for(name)`` returns a callable computing the output after the
    tensor ``name`` (read in place from ``params``/``inputs``) changed.
    Entries whose +/-eps evaluations flip a ReLU or max-pool decision sit on
    a kink where the derivative is undefined; they are counted in ``kinks``
    and excluded from the error.
    """
    full = forward_for(None)
    out = full()
    target = rng.normal(size=out.shape)
    base = _gate_state(gated_layers)
    analytic = backward(2.0 * (out - target))
    errors, kinks = {}, 0
    for name, arr in {**params, **inputs}.items():
        fwd = forward_for(name)
        num = np.zeros(arr.shape)
        skip = np.zeros(arr.shape, dtype=bool)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            lp = float(np.sum((fwd() - target) ** 2))
            gp = _gate_state(gated_layers)
            flat[i] = old - eps
            lm = float(np.sum((fwd() - target) ** 2))
            gm = _gate_state(gated_layers)
            flat[i] = old
            num.flat[i] = (lp - lm) / (2 * eps)
            if not (_same(base, gp) and _same(base, gm)):
                skip.flat[i] = True
        full()
        kinks += int(skip.sum())
        err = rel_error(analytic[name], num)
        errors[name] = float(err[~skip].max()) if (~skip).any() else 0.0
    return errors, kinks


def grad_check_layer(layer, in_shape, eps=1e-5, seed=0, batch=2, low=-1.0, high=1.0):
    """Per-tensor max relative error for one layer on random inputs.

    Returns ``({"input": e, "W": e, ...}, kinks)``.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(low, high, size=(batch,) + tuple(in_shape))
    params = {k: v for k, v in layer.params.items()}
    for v in params.values():
        v[...] = rng.uniform(-1, 1, size=v.shape)

    def forward_for(name):
        return lambda: layer.forward(x)

    def backward(dout):
        dx = layer.backward(dout)
        return {"input": dx, **{k: layer.grads[k] for k in params}}

    gated = [layer] if isinstance(layer, (ReLU, MaxPool)) else []
    return _check(forward_for, backward, params, {"input": x}, gated, eps, rng)


def grad_check(model: Model, eps=1e-5, seed=0, batch=2, check_inputs=False):
    """Max relative error per layer of ``model`` (float64 required).

    Returns ``(errors, kinks)`` where ``errors`` maps each parametrised layer
    (and with ``check_inputs`` each model input) to the worst relative error
    found.
    """
    if model.dtype != np.float64:
        raise TypeError("gradient checking needs a float64 model")
    rng = np.random.default_rng(seed)
    inputs = {}
    if model.silhouette_shape:
        inputs["silhouette"] = rng.uniform(0, 1, size=(batch,) + model.silhouette_shape)
    if model.accel_shape:
        inputs["accel"] = rng.normal(size=(batch,) + model.accel_shape)
    pmap = model.parameters()
    params = {n: layer.params[k] for n, (layer, k) in pmap.items()}
    gated = [layer for _, layer in model.named_layers() if isinstance(layer, (ReLU, MaxPool))]

    # inputs recorded before each layer so a perturbed tensor only reruns
    # the layers downstream of it
    acts = {}

    def run_full():
        acts.clear()
        feats = []
        if model.sil is not None:
            acts["silhouette"] = []
            x = np.ascontiguousarray(inputs["silhouette"].transpose(0, 3, 1, 2))
            feats.append(model.sil.forward(x, acts["silhouette"]))
        if model.acc is not None:
            acts["accel"] = []
            x = np.ascontiguousarray(inputs["accel"].transpose(0, 2, 1))
            feats.append(model.acc.forward(x, acts["accel"]))
        acts["feats"] = feats
        acts["head"] = []
        out = model.head.forward(model.concat.forward(feats), acts["head"])
        model._ran = True
        return out[:, 0]

    where = {}
    for n, (layer, _) in pmap.items():
        for branch_name, branch in (("silhouette", model.sil), ("accel", model.acc), ("head", model.head)):
            if branch is not None and layer in branch.layers:
                where[n] = (branch_name, branch, branch.layers.index(layer))

    def forward_for(name):
        if name is None or name not in where:
            return run_full
        branch_name, branch, i = where[name]
        if branch_name == "head":
            x = acts["head"][i]
            return lambda: branch.forward_from(i, x)[:, 0]
        slot = 0 if branch_name == "silhouette" or model.sil is None else 1
        x = acts[branch_name][i]

        def partial():
            feats = list(acts["feats"])
            feats[slot] = branch.forward_from(i, x)
            return model.head.forward(model.concat.forward(feats))[:, 0]
        return partial

    def backward(dpred):
        gin = model.backward(dpred)
        return {**model.get_grads(), **gin}

    checked = inputs if check_inputs else {}
    raw, kinks = _check(forward_for, backward, params, checked, gated, eps, rng)
    errors = {}
    for name, e in raw.items():
        layer_name = name.rsplit(".", 1)[0] if name in pmap else f"input.{name}"
        errors[layer_name] = max(errors.get(layer_name, 0.0), e)
    return errors, kinks
