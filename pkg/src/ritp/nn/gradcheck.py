"""Directional finite-difference gradient checks for network blocks."""
from __future__ import annotations

import torch


def directional_grad_check(loss_fn, params, draws: int = 100, h: float = 1e-5,
                           rel_tol: float = 1e-4, generator: torch.Generator | None = None) -> float:
    """Compare autograd against central finite differences along random directions.

    loss_fn: () -> scalar tensor built from `params` (list of leaf tensors with
    requires_grad). Returns the worst relative error; raises AssertionError if
    it exceeds rel_tol.
    """
    if generator is None:
        generator = torch.Generator().manual_seed(0)
    worst = 0.0
    for _ in range(draws):
        loss = loss_fn()
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        dirs = []
        norm2 = 0.0
        for p in params:
            v = torch.empty_like(p).normal_(generator=generator)
            dirs.append(v)
            norm2 += float((v * v).sum())
        scale = norm2**0.5
        dirs = [v / scale for v in dirs]
        analytic = 0.0
        for g, v in zip(grads, dirs):
            if g is not None:
                analytic += float((g * v).sum())
        with torch.no_grad():
            for p, v in zip(params, dirs):
                p += h * v
            plus = float(loss_fn())
            for p, v in zip(params, dirs):
                p -= 2.0 * h * v
            minus = float(loss_fn())
            for p, v in zip(params, dirs):
                p += h * v
        numeric = (plus - minus) / (2.0 * h)
        denom = max(abs(analytic), abs(numeric), 1e-8)
        rel = abs(analytic - numeric) / denom
        worst = max(worst, rel)
    if worst > rel_tol:
        raise AssertionError(f"gradient check failed: worst rel err {worst:.3e} > {rel_tol}")
    return worst
