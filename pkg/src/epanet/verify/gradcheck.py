"""Finite-difference gradient checking against autograd."""

from __future__ import annotations

import torch

from ..errors import ConfigurationError, NonDifferentiableError

__all__ = ["finite_diff_gradcheck"]


def finite_diff_gradcheck(op, x: torch.Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference input gradients.

    ``op`` must be a deterministic function of its input (run normalization in
    inference mode).  The scalar readout is the sum of the output.  Central
    differences are compared coordinate by coordinate against autograd;
    asymmetric forward/backward secants raise ``NonDifferentiableError`` with
    the offending flat indices.
    """
    if not (1e-6 <= eps <= 1e-4):
        raise ConfigurationError(f"eps must be in [1e-6, 1e-4], got {eps}")
    x = x.detach().double()
    xg = x.clone().requires_grad_(True)
    loss = op(xg).sum()
    analytic = torch.autograd.grad(loss, xg)[0].reshape(-1)

    flat = x.reshape(-1)
    numeric = torch.zeros_like(flat)
    flagged = []
    with torch.no_grad():
        f0 = float(op(x).sum())
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + eps
            f_plus = float(op(x).sum())
            flat[i] = orig - eps
            f_minus = float(op(x).sum())
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * eps)
            fwd = (f_plus - f0) / eps
            bwd = (f0 - f_minus) / eps
            if abs(fwd - bwd) > 1e-2 * max(1.0, abs(fwd), abs(bwd)):
                flagged.append(i)
    if flagged:
        raise NonDifferentiableError(flagged)

    denom = torch.maximum(
        torch.maximum(analytic.abs(), numeric.abs()),
        torch.full_like(numeric, 1e-8),
    )
    return float(((analytic - numeric).abs() / denom).max())
