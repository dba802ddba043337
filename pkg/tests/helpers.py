"""Shared test utilities, chiefly finite-difference checks over whole models."""

import numpy as np

import bepredict.numcore as nc
from bepredict.numcore import RngStream, Tape


def param_grad_check(loss_fn, named_params, rng=None, samples_per_param=3, h=1e-5):
    """Finite-difference check of d(loss)/d(param) for a list of parameters.

    loss_fn builds the scalar loss from scratch on every call, reading the
    parameters' current .data, so it must be deterministic (no dropout, no
    fresh randomness).  Returns the worst relative error over all sampled
    coordinates, using max(1, |analytic|) in the denominator.
    """
    if rng is None:
        rng = RngStream(0, "param_grad_check")
    params = [t for _, t in named_params]

    with Tape():
        loss = loss_fn()
        nc.backward(loss)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in named_params}
    nc.zero_grads(params)

    worst = 0.0
    for name, tensor in named_params:
        coords = list(np.ndindex(*tensor.data.shape)) if tensor.data.shape else [()]
        if samples_per_param < len(coords):
            picked = rng.spawn(name).choice(len(coords), size=samples_per_param,
                                            replace=False)
            coords = [coords[i] for i in picked]
        for idx in coords:
            orig = tensor.data[idx]
            tensor.data[idx] = orig + h
            f_plus = loss_fn().item()
            tensor.data[idx] = orig - h
            f_minus = loss_fn().item()
            tensor.data[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[name][idx]
            err = abs(a - numeric) / max(1.0, abs(a))
            worst = max(worst, err)
    return worst
