"""Training losses as pure functions with analytic gradients.

Each loss returns a LossValue carrying the scalar and the gradient with
respect to its differentiated input, so the gradients can be verified against
central finite differences without any autodiff framework.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError

NORM_CUTOFF = 1e-6  # vectors shorter than this are skipped by the cosine term


@dataclass(frozen=True)
class LossValue:
    value: float
    gradient: np.ndarray


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> LossValue:
    """Mean over points of -log softmax(logits)[label].

    Gradient w.r.t. the pre-softmax logits: (softmax - onehot) / N.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ContractError("labels must be valid class ids, one per row")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    value = -log_probs[np.arange(n), labels].mean()
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return LossValue(float(value), grad / n)


def offset_loss(pred: np.ndarray, gt: np.ndarray) -> LossValue:
    """Mean L1 distance between endpoints plus mean cosine distance.

    The cosine sum runs only over points where both vectors are longer than
    NORM_CUTOFF (points sitting at their instance centre have zero true
    offset and an undefined direction). Both terms carry unit weight.
    Gradient w.r.t. pred.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ContractError("pred and gt must both be (N, 3)")
    n = pred.shape[0]
    if n == 0:
        return LossValue(0.0, np.zeros_like(pred))

    diff = pred - gt
    l1 = np.abs(diff).sum() / n
    grad = np.sign(diff) / n

    pn = np.linalg.norm(pred, axis=1)
    gn = np.linalg.norm(gt, axis=1)
    active = (pn > NORM_CUTOFF) & (gn > NORM_CUTOFF)
    n_active = int(active.sum())
    cos_term = 0.0
    if n_active:
        p = pred[active]
        g = gt[active]
        pa = pn[active][:, None]
        ga = gn[active][:, None]
        # 1 - cos = |p/|p| - g/|g||^2 / 2, exactly zero for identical vectors
        unit_gap = p / pa - g / ga
        cos_term = float(0.5 * (unit_gap**2).sum() / n_active)
        dots = (p * g).sum(axis=1, keepdims=True)
        # d/dp of -p.g/(|p||g|) = -g/(|p||g|) + (p.g) p / (|p|^3 |g|)
        grad[active] += (-g / (pa * ga) + dots * p / (pa**3 * ga)) / n_active
    return LossValue(float(l1 + cos_term), grad)


def discriminative_loss(
    embeddings: np.ndarray,
    instance_ids: np.ndarray,
    var_margin: float = 0.5,
    dist_margin: float = 1.5,
    weights: tuple[float, float, float] = (1.0, 1.0, 0.001),
) -> LossValue:
    """Contrastive embedding loss: pull to cluster means, push means apart.

    L = w_var * (1/K) sum_c (1/|c|) sum_i max(0, |mu_c - e_i| - var_margin)^2
      + w_dist * (1/(K(K-1))) sum_{a != b} max(0, 2*dist_margin - |mu_a - mu_b|)^2
      + w_reg * (1/K) sum_c |mu_c|

    Points with instance id -1 are excluded (zero gradient). The distance term
    is zero when only one instance is present. Gradient w.r.t. embeddings.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    instance_ids = np.asarray(instance_ids, dtype=np.int64)
    if embeddings.ndim != 2 or instance_ids.shape != (embeddings.shape[0],):
        raise ContractError("embeddings must be (N, D) with one instance id per row")
    w_var, w_dist, w_reg = weights

    member = instance_ids >= 0
    ids = instance_ids[member]
    if ids.size == 0:
        raise ContractError("discriminative loss needs at least one instance")
    uniq, inverse = np.unique(ids, return_inverse=True)
    inverse = inverse.ravel()
    k = uniq.size
    emb = embeddings[member]
    counts = np.bincount(inverse, minlength=k).astype(np.float64)
    mu = np.stack(
        [np.bincount(inverse, weights=emb[:, d], minlength=k) for d in range(emb.shape[1])],
        axis=1,
    )
    mu /= counts[:, None]

    grad = np.zeros_like(embeddings)
    grad_emb = np.zeros_like(emb)  # gradient on member rows
    grad_mu = np.zeros_like(mu)  # accumulated via the mean downstream

    # variance (pull) term
    delta = mu[inverse] - emb
    dist = np.linalg.norm(delta, axis=1)
    hinge = np.maximum(0.0, dist - var_margin)
    var_term = float((hinge**2 / counts[inverse]).sum() / k)
    active = hinge > 0
    if np.any(active):
        coeff = (
            2.0 * hinge[active] / (dist[active] * counts[inverse[active]] * k)
        )[:, None] * delta[active]
        # d dist/d emb_i = -delta/dist; d dist/d mu_c = +delta/dist
        grad_emb[active] -= w_var * coeff
        np.add.at(grad_mu, inverse[active], w_var * coeff)

    # distance (push) term over ordered pairs a != b
    dist_term = 0.0
    if k > 1:
        sep = mu[:, None, :] - mu[None, :, :]
        sep_norm = np.linalg.norm(sep, axis=2)
        np.fill_diagonal(sep_norm, np.inf)
        push = np.maximum(0.0, 2.0 * dist_margin - sep_norm)
        dist_term = float((push**2).sum() / (k * (k - 1)))
        hit = (push > 0) & (sep_norm > 0)  # coinciding means: kink, zero subgradient
        if np.any(hit):
            coeff = np.where(hit, -2.0 * push / np.where(hit, sep_norm, 1.0), 0.0)
            # each ordered pair (a,b) contributes coeff * (mu_a - mu_b) to mu_a
            # and the negative to mu_b; summing over rows covers both roles
            pair_grad = coeff[:, :, None] * sep / (k * (k - 1))
            grad_mu += w_dist * 2.0 * pair_grad.sum(axis=1)

    # regularizer on the means
    mu_norm = np.linalg.norm(mu, axis=1)
    reg_term = float(mu_norm.sum() / k)
    safe = mu_norm > 0
    grad_mu[safe] += w_reg * mu[safe] / (mu_norm[safe][:, None] * k)

    # push mu gradients back through mu_c = mean of members
    grad_emb += grad_mu[inverse] / counts[inverse][:, None]
    grad[member] = grad_emb
    value = w_var * var_term + w_dist * dist_term + w_reg * reg_term
    return LossValue(float(value), grad)


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------


def finite_difference_gradient(
    fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.copy().ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        up = fn(xf.reshape(x.shape))
        xf[i] = orig - h
        down = fn(xf.reshape(x.shape))
        xf[i] = orig
        flat[i] = (up - down) / (2.0 * h)
    return grad


def relative_gradient_error(
    analytic: np.ndarray, numeric: np.ndarray, mask: np.ndarray | None = None, floor: float = 1e-4
) -> float:
    """Max per-coordinate relative error; the denominator floor keeps
    near-zero entries from comparing finite-difference noise against zero."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    err = np.abs(analytic - numeric) / denom
    if mask is not None:
        err = err[mask]
    return float(err.max()) if err.size else 0.0


KINK_MARGIN = 1e-4  # stay this far from hinge/abs kinks when checking


def gradcheck_losses(trials: int = 100, seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    """Max relative gradient error per loss over seeded random inputs.

    Inputs falling within KINK_MARGIN of a non-differentiable point are
    resampled (discriminative hinges) or masked out coordinate-wise (L1 term
    of the offset loss); the losses are smooth elsewhere.
    """
    rng = np.random.default_rng(seed)
    worst = {"cross_entropy": 0.0, "offset_loss": 0.0, "discriminative_loss": 0.0}

    for _ in range(trials):
        logits = rng.normal(size=(8, 5))
        labels = rng.integers(0, 5, size=8)
        res = cross_entropy(logits, labels)
        num = finite_difference_gradient(lambda x: cross_entropy(x, labels).value, logits, h)
        worst["cross_entropy"] = max(
            worst["cross_entropy"], relative_gradient_error(res.gradient, num)
        )

    for _ in range(trials):
        pred = rng.normal(size=(10, 3))
        gt = rng.normal(size=(10, 3))
        mask = np.abs(pred - gt) > KINK_MARGIN  # L1 kink exclusion
        res = offset_loss(pred, gt)
        num = finite_difference_gradient(lambda x: offset_loss(x, gt).value, pred, h)
        worst["offset_loss"] = max(
            worst["offset_loss"], relative_gradient_error(res.gradient, num, mask)
        )

    done = 0
    while done < trials:
        emb = rng.normal(scale=1.5, size=(12, 5))
        ids = rng.integers(0, 3, size=12)
        if not _discriminative_kink_free(emb, ids):
            continue
        res = discriminative_loss(emb, ids)
        num = finite_difference_gradient(lambda x: discriminative_loss(x, ids).value, emb, h)
        worst["discriminative_loss"] = max(
            worst["discriminative_loss"], relative_gradient_error(res.gradient, num)
        )
        done += 1
    return worst


def _discriminative_kink_free(
    emb: np.ndarray, ids: np.ndarray, var_margin: float = 0.5, dist_margin: float = 1.5
) -> bool:
    member = ids >= 0
    uniq, inverse = np.unique(ids[member], return_inverse=True)
    inverse = inverse.ravel()
    e = emb[member]
    k = uniq.size
    counts = np.bincount(inverse, minlength=k).astype(np.float64)
    mu = np.stack(
        [np.bincount(inverse, weights=e[:, d], minlength=k) for d in range(e.shape[1])], axis=1
    )
    mu /= counts[:, None]
    dist = np.linalg.norm(mu[inverse] - e, axis=1)
    if np.any(np.abs(dist - var_margin) < KINK_MARGIN):
        return False
    if np.any(np.linalg.norm(mu, axis=1) < KINK_MARGIN):
        return False
    if k > 1:
        sep = np.linalg.norm(mu[:, None, :] - mu[None, :, :], axis=2)
        iu = np.triu_indices(k, 1)
        if np.any(np.abs(sep[iu] - 2.0 * dist_margin) < KINK_MARGIN):
            return False
        if np.any(sep[iu] < KINK_MARGIN):
            return False
    return True
