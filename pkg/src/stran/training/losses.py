"""Training objective: reconstruction, WGAN-GP, perceptual and texture terms."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..autodiff import (
    Tensor,
    absolute,
    add_scalar,
    input_gradient,
    no_grad,
    reduce,
    sample_norm,
    square,
    sub,
)
from ..autodiff.tensor import ShapeError
from ..nn import SLOPE, ParamSet, add_conv, conv, conv_act
from ..texture import lte_forward
from .extractors import FeatureExtractor

FULL_SCALE_WEIGHTS = (1.0, 5e-4, 1e-2, 1e-2)


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    adv: float = 5e-4
    per: float = 1e-2
    tex: float = 1e-2
    gp_lambda: float = 10.0

    def __post_init__(self):
        if min(self.rec, self.adv, self.per, self.tex, self.gp_lambda) < 0:
            raise ValueError("loss weights must be non-negative")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def loss_rec(gt, out: Tensor) -> Tensor:
    """Mean absolute error over C*H*W, averaged over the batch."""
    gt = _as_tensor(gt)
    if gt.shape != out.shape:
        raise ShapeError("loss_rec", gt.shape, out.shape)
    return reduce(absolute(sub(gt, out)), "mean")


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("mse", a.shape, b.shape)
    return reduce(square(sub(a, b)), "mean")


# ---------------------------------------------------------------------------
# critic
# ---------------------------------------------------------------------------
DISC_WIDTHS = (16, 32, 64)


def init_discriminator(widths=DISC_WIDTHS, seed: int = 1, dtype=np.float32) -> ParamSet:
    """Strided conv critic with no normalization layers."""
    rng = np.random.default_rng(seed)
    ps = ParamSet()
    ic = 3
    for i, oc in enumerate(widths):
        add_conv(ps, f"disc.conv{i}", ic, oc, 3, rng, dtype=dtype)
        ic = oc
    add_conv(ps, "disc.out", ic, 1, 3, rng, dtype=dtype)
    return ps


def discriminator(ps: ParamSet) -> Callable[[Tensor], Tensor]:
    """Critic as a callable mapping (n, 3, h, w) images to (n,) scores."""
    depth = sum(1 for n in ps.names() if n.startswith("disc.conv") and n.endswith(".weight"))

    def critic(x: Tensor) -> Tensor:
        for i in range(depth):
            x = conv_act(ps, f"disc.conv{i}", x, stride=2)
        return reduce(conv(ps, "disc.out", x), "mean", per_sample=True)

    return critic


def gradient_penalty(critic, x_real, x_fake, rng: Optional[np.random.Generator] = None,
                     u: Optional[np.ndarray] = None) -> Tensor:
    """Mean over the batch of (||grad_x D(x_hat)||_2 - 1)^2 on random interpolates."""
    real = x_real.data if isinstance(x_real, Tensor) else np.asarray(x_real)
    fake = x_fake.data if isinstance(x_fake, Tensor) else np.asarray(x_fake)
    if real.shape != fake.shape:
        raise ShapeError("gradient_penalty", real.shape, fake.shape)
    n = real.shape[0]
    if u is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        u = rng.uniform(0.0, 1.0, size=n)
    u = np.asarray(u, dtype=real.dtype).reshape((n,) + (1,) * (real.ndim - 1))
    x_hat = Tensor(u * real + (1 - u) * fake, requires_grad=True)
    scores = critic(x_hat)
    grad = input_gradient(reduce(scores, "sum"), x_hat, allow_unused=True)
    return reduce(square(add_scalar(sample_norm(grad), -1.0)), "mean")


def loss_d(critic, x_real, x_fake, gp_lambda: float = 10.0, rng=None, u=None) -> Tensor:
    """E[D(fake)] - E[D(real)] + lambda * GP."""
    real, fake = _as_tensor(x_real).detach(), _as_tensor(x_fake).detach()
    wdist = reduce(critic(fake), "mean") - reduce(critic(real), "mean")
    return wdist + gradient_penalty(critic, real, fake, rng, u) * gp_lambda


def loss_adv(critic, x_fake: Tensor) -> Tensor:
    return -reduce(critic(x_fake), "mean")


# ---------------------------------------------------------------------------
# feature-space terms
# ---------------------------------------------------------------------------
def feature_loss(extractor: FeatureExtractor, out: Tensor, gt) -> Tensor:
    """Mean over taps of the per-tap mean squared feature difference."""
    with no_grad():
        targets = extractor.features(_as_tensor(gt))
    feats = extractor.features(out)
    total = None
    for f, t in zip(feats, targets):
        term = mse(f, t)
        total = term if total is None else total + term
    return total * (1.0 / len(feats))


def lte_term(out: Tensor, transferred: Tensor, lte: ParamSet) -> Tensor:
    """Squared distance between extractor features of the output and the transferred textures.

    Compared on the coarsest extractor stage, which for an output at 4x the input
    resolution has exactly the spatial size of the coarsest-scale transfer.
    """
    feat = lte_forward(out, lte)[-1]
    return mse(feat, transferred)


def loss_per(out: Tensor, gt, transferred: Tensor, lte: ParamSet, extractor: FeatureExtractor) -> Tensor:
    return feature_loss(extractor, out, gt) + lte_term(out, transferred, lte)


def loss_tex(out: Tensor, gt, extractor: FeatureExtractor) -> Tensor:
    return feature_loss(extractor, out, gt)


def total_loss(parts: Sequence, weights: LossWeights | Sequence[float], warmup: bool = False):
    """Weighted sum of (rec, adv, per, tex); during warm-up only the reconstruction term.

    Works on floats or Tensors; terms with zero weight or a ``None`` part are skipped.
    """
    if isinstance(weights, LossWeights):
        weights = (weights.rec, weights.adv, weights.per, weights.tex)
    terms = [p * w for i, (w, p) in enumerate(zip(weights, parts))
             if not (warmup and i > 0) and p is not None and w != 0]
    if not terms:
        return 0.0
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total
