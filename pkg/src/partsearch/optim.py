"""Adam updates and finite-difference gradient verification."""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import Parameter, Tensor, backward, no_grad, zero_grads


def adam_step(params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update per parameter.

    Reads ``grad`` buffers without modifying them; the caller clears grads
    between steps.
    """
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.adam_t += 1
        p.adam_m += (1.0 - beta1) * (g - p.adam_m)
        p.adam_v += (1.0 - beta2) * (g * g - p.adam_v)
        mhat = p.adam_m / (1.0 - beta1 ** p.adam_t)
        vhat = p.adam_v / (1.0 - beta2 ** p.adam_t)
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype, copy=False)


def default_fd_step(dtype) -> float:
    return 1e-3 if np.dtype(dtype) == np.float32 else 1e-6


def _eval_scalar(f) -> float:
    out = f()
    if isinstance(out, Tensor):
        out = out.item()
    out = float(out)
    if not np.isfinite(out):
        raise NumericError("finite_diff: objective returned a non-finite value")
    return out


def collect_gradients(f, params: list[Parameter]) -> dict[str, np.ndarray]:
    """Run one forward/backward of the objective; returns grads by name."""
    zero_grads(params)
    loss = f()
    if not isinstance(loss, Tensor):
        raise ShapeError("finite_diff: objective must return a Tensor")
    backward(loss)
    return {p.name: p.grad.copy() for p in params}


def fd_compare(f, params: list[Parameter], analytic: dict[str, np.ndarray],
               h: float | None = None) -> dict[str, float]:
    """Compare given analytic gradients to central differences, per parameter.

    Returns, for each parameter, the max over elements of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if not params:
        raise ShapeError("finite_diff: no parameters to check")
    if h is None:
        h = default_fd_step(params[0].dtype)
    if h <= 0:
        raise NumericError(f"finite_diff: step must be positive, got {h}")

    report: dict[str, float] = {}
    with no_grad():
        for p in params:
            aflat = analytic[p.name].reshape(-1)
            worst = 0.0
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                hi_x = float(flat[i])
                hi = _eval_scalar(f)
                flat[i] = orig - h
                lo_x = float(flat[i])
                lo = _eval_scalar(f)
                flat[i] = orig
                # use the realized parameter difference: h itself rounds in fp32
                numeric = (hi - lo) / (hi_x - lo_x)
                ai = float(aflat[i])
                denom = max(abs(ai), abs(numeric), 1e-8)
                worst = max(worst, abs(ai - numeric) / denom)
            report[p.name] = worst
    return report


def finite_diff_report(f, params: list[Parameter], h: float | None = None) -> dict[str, float]:
    """Central-difference check of analytic gradients, per parameter.

    ``f`` evaluates the scalar objective from the current parameter values
    and must rebuild its graph on every call.
    """
    return fd_compare(f, params, collect_gradients(f, params), h)


def finite_diff_check(f, params: list[Parameter], h: float | None = None) -> float:
    """Max relative error between analytic and central-difference gradients."""
    report = finite_diff_report(f, params, h)
    return max(report.values())
