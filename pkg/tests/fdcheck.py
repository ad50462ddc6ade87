"""Finite-difference gradient checking against autograd.

The model runs in double precision and eval mode (batch-norm statistics
frozen after a short warm-up) so each loss is a deterministic piecewise-
smooth function of the parameters. A coordinate passes when the analytic
gradient matches the central difference at step 1e-3 (scaled by parameter
magnitude). ReLU and max-pool make the loss only one-sided differentiable
at kink points; there the central difference measures the average of the
two one-sided slopes, so a coordinate also passes when the analytic value
matches either Richardson-extrapolated one-sided slope. A wrong gradient
matches neither.
"""

import numpy as np
import torch

REL_TOL = 1e-4
ABS_TOL = 1e-9
BASE_STEP = 1e-3


def warm_up_batchnorm(model, x, n=3):
    model.train()
    with torch.no_grad():
        for _ in range(n):
            model.forward_heads(x, tuple(model.heads.keys()))
    model.eval()


def sample_coordinates(params, n, rng):
    """n (tensor, index-tuple) pairs, parameters weighted by element count."""
    params = [p for p in params if p.numel()]
    sizes = np.array([p.numel() for p in params], dtype=float)
    coords = []
    for _ in range(n):
        pi = rng.choice(len(params), p=sizes / sizes.sum())
        flat = int(rng.integers(params[pi].numel()))
        coords.append((params[pi],
                       np.unravel_index(flat, params[pi].shape)))
    return coords


def analytic_grads(loss_fn, coords):
    seen = set()
    for p, _ in coords:
        if id(p) not in seen:
            p.grad = None
            seen.add(id(p))
    loss = loss_fn()
    loss.backward()
    return [0.0 if p.grad is None else float(p.grad[idx])
            for p, idx in coords]


def _shifted(loss_fn, p, idx, delta):
    with torch.no_grad():
        orig = float(p[idx])
        p[idx] = orig + delta
        value = float(loss_fn().detach())
        p[idx] = orig
    return value


def _agrees(a, b):
    if abs(a - b) < ABS_TOL:
        return True
    return abs(a - b) / max(abs(a), abs(b), 1e-8) < REL_TOL


def coordinate_matches(loss_fn, p, idx, analytic, f0=None):
    """True when the analytic gradient matches finite differences at this
    coordinate (central, or a one-sided slope at a kink)."""
    h = BASE_STEP * max(abs(float(p.detach()[idx])), 1e-2)
    f_plus = _shifted(loss_fn, p, idx, h)
    f_minus = _shifted(loss_fn, p, idx, -h)
    if _agrees(analytic, (f_plus - f_minus) / (2 * h)):
        return True
    if f0 is None:
        f0 = float(loss_fn())
    f_plus_half = _shifted(loss_fn, p, idx, h / 2)
    f_minus_half = _shifted(loss_fn, p, idx, -h / 2)
    right = 2 * (f_plus_half - f0) / (h / 2) - (f_plus - f0) / h
    left = 2 * (f0 - f_minus_half) / (h / 2) - (f0 - f_minus) / h
    return _agrees(analytic, right) or _agrees(analytic, left)


def check_gradients(loss_fn, params, n_coords, rng):
    """Fraction of sampled coordinates whose autograd gradient matches
    finite differences."""
    coords = sample_coordinates(params, n_coords, rng)
    analytic = analytic_grads(loss_fn, coords)
    with torch.no_grad():
        f0 = float(loss_fn())
    hits = sum(coordinate_matches(loss_fn, p, idx, a, f0=f0)
               for (p, idx), a in zip(coords, analytic))
    return hits / n_coords
