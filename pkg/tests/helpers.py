"""Oracles shared by several test modules."""
import math
import random

import torch


def numerical_grad(fn, param, index, step=1e-5):
    """Central difference of scalar ``fn()`` with respect to ``param[index]``."""
    with torch.no_grad():
        orig = param[index].item()
        param[index] = orig + step
        plus = fn().item()
        param[index] = orig - step
        minus = fn().item()
        param[index] = orig
    return (plus - minus) / (2 * step)


def relative_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradient_check(module, fn, n_params=20, seed=0, step=1e-5):
    """Compare autograd against central differences on ``n_params`` random scalar weights.

    Returns a list of ``(name, index, analytic, numeric, rel_error)``.
    """
    rng = random.Random(seed)
    params = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    sizes = [p.numel() for _, p in params]
    picks = []
    for _ in range(n_params):
        k = rng.choices(range(len(params)), weights=sizes)[0]
        name, p = params[k]
        flat = rng.randrange(p.numel())
        picks.append((name, p, tuple(int(i) for i in torch.unravel_index(torch.tensor(flat), p.shape))))
    module.zero_grad(set_to_none=True)
    fn().backward()
    results = []
    for name, p, idx in picks:
        analytic = p.grad[idx].item() if p.grad is not None else 0.0
        numeric = numerical_grad(fn, p, idx, step)
        results.append((name, idx, analytic, numeric, relative_error(analytic, numeric)))
    return results
