"""Central finite-difference checker used as the verification oracle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Parameter, Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    checked: int
    worst: Optional[tuple] = None
    per_param: dict = field(default_factory=dict)

    def ok(self, tol: float) -> bool:
        return self.max_rel_err <= tol


def numerical_grad(f: Callable[[], Tensor], p: Tensor, index: tuple, eps: float) -> float:
    flat = p.data.reshape(-1)
    k = np.ravel_multi_index(index, p.shape)
    orig = flat[k]
    # graphs stay enabled: f may itself need input gradients
    flat[k] = orig + eps
    fp = f().item()
    flat[k] = orig - eps
    fm = f().item()
    flat[k] = orig
    return (fp - fm) / (2.0 * eps)


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    fraction: float = 1.0,
    max_per_param: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` rebuilds the scalar graph from the current parameter values.  The
    relative error of a coordinate is |analytic - numeric| divided by
    max(|analytic|, |numeric|, floor); ``floor`` keeps near-zero gradients from
    dominating through round-off.  ``fraction``/``max_per_param`` subsample
    coordinates with a seeded generator.
    """
    for p in params:
        if isinstance(p, Parameter):
            p.zero_grad()
        else:
            p.grad = None
    out = f()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst_rel, worst_abs, worst, checked = 0.0, 0.0, None, 0
    per_param = {}
    for pi, (p, a) in enumerate(zip(params, analytic)):
        total = p.data.size
        count = total if fraction >= 1.0 else max(1, int(round(total * fraction)))
        if max_per_param is not None:
            count = min(count, max_per_param)
        flat_idx = np.arange(total) if count == total else rng.choice(total, size=count, replace=False)
        local = 0.0
        for k in flat_idx:
            idx = np.unravel_index(int(k), p.shape)
            num = numerical_grad(f, p, idx, eps)
            ana = float(a[idx])
            abs_err = abs(ana - num)
            rel = abs_err / max(abs(ana), abs(num), floor)
            checked += 1
            local = max(local, rel)
            worst_abs = max(worst_abs, abs_err)
            if rel > worst_rel:
                worst_rel, worst = rel, (getattr(p, "name", None) or pi, idx, ana, num)
        per_param[getattr(p, "name", None) or pi] = local
    return GradCheckReport(worst_rel, worst_abs, checked, worst, per_param)


def directional_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    fraction: float = 0.01,
    directions: int = 4,
    eps: float = 1e-6,
    seed: int = 0,
) -> float:
    """Worst relative error of g.v against a central difference along v.

    Each direction v is a random +-1 vector supported on a seeded ``fraction``
    of all parameter coordinates, so many coordinates are covered for the cost
    of two evaluations per direction.
    """
    for p in params:
        if isinstance(p, Parameter):
            p.zero_grad()
        else:
            p.grad = None
    f().backward()
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    sizes = np.array([p.data.size for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(directions):
        picked = rng.choice(total, size=max(1, int(round(total * fraction))), replace=False)
        signs = rng.choice([-1.0, 1.0], size=picked.size)
        owner = np.searchsorted(offsets, picked, side="right") - 1
        vs = [np.zeros(p.data.size) for p in params]
        for k, o, s in zip(picked, owner, signs):
            vs[o][k - offsets[o]] = s
        analytic = sum(float(np.dot(g.reshape(-1), v)) for g, v in zip(grads, vs))
        originals = [p.data.copy() for p in params]

        def shifted(step):
            for p, v, orig in zip(params, vs, originals):
                p.data = orig + step * v.reshape(p.shape).astype(orig.dtype)
            return f().item()

        try:
            numeric = (shifted(eps) - shifted(-eps)) / (2.0 * eps)
        finally:
            for p, orig in zip(params, originals):
                p.data = orig
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12))
    return worst
