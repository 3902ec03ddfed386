"""Training losses over triple energies, each returning an exact analytic
gradient via a weighted-sum-of-energies decomposition.

Conventions (f is an energy, lower = better):

* ``bce``          -- sigmoid applied to -f; positives labeled 1.
* ``margin``       -- pairwise hinge max(0, f_pos + margin - f_neg).
* ``crossentropy`` -- per positive, softmax of -f over every entity as the
                      candidate tail; no negative sampling.
* ``nssa``         -- self-adversarial weighting of sampled negatives with
                      softmax(temperature * (margin - f_neg)); the weights
                      are treated as constants in the gradient.
"""

from __future__ import annotations

import numpy as np

from . import models
from .errors import NumericError, UsageError

BCE = "bce"
MARGIN = "margin"
CROSSENTROPY = "crossentropy"
NSSA = "nssa"
LOSSES = (BCE, MARGIN, CROSSENTROPY, NSSA)


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    return np.logaddexp(0.0, x)


def _check_negatives(loss, negatives):
    if negatives is None or negatives.size == 0:
        raise UsageError(f"{loss} loss requires sampled negatives")


def loss_and_grad(params: models.ModelParams, positives: np.ndarray,
                  negatives: np.ndarray | None, config) -> tuple[float, dict]:
    """Batch loss and analytic gradients for every parameter touched.

    ``positives`` is (n_pos, 3); ``negatives`` is (n_pos, n_negs, 3) and is
    ignored by crossentropy. Raises :class:`NumericError` (with batch
    diagnostics) when the loss is non-finite.
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    if negatives is not None:
        negatives = np.asarray(negatives, dtype=np.int64)
        if negatives.size:
            negatives = negatives.reshape(positives.shape[0], -1, 3)
    loss = config.loss
    if loss == BCE:
        value, req = _bce(params, positives, negatives, config)
    elif loss == MARGIN:
        _check_negatives(loss, negatives)
        value, req = _margin(params, positives, negatives, config)
    elif loss == CROSSENTROPY:
        value, req = _crossentropy(params, positives, config)
    elif loss == NSSA:
        _check_negatives(loss, negatives)
        value, req = _nssa(params, positives, negatives, config)
    else:
        raise UsageError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    if not np.isfinite(value):
        raise NumericError(
            f"{loss} loss is non-finite on a batch of {positives.shape[0]} positives")
    h, r, t, coeffs = req
    grads = models.grad_from_requests(params, h, r, t, coeffs, p=config.score_exponent)
    return float(value), grads


def _bce(params, positives, negatives, config):
    p = config.score_exponent
    f_pos = models.batch_scores(params, positives[:, 0], positives[:, 1],
                                positives[:, 2], p=p)
    parts_h = [positives[:, 0]]
    parts_r = [positives[:, 1]]
    parts_t = [positives[:, 2]]
    total = _softplus(f_pos).sum()
    n = f_pos.shape[0]
    if negatives is not None and negatives.size:
        flat = negatives.reshape(-1, 3)
        f_neg = models.batch_scores(params, flat[:, 0], flat[:, 1], flat[:, 2], p=p)
        total += _softplus(-f_neg).sum()
        n += f_neg.shape[0]
        parts_h.append(flat[:, 0])
        parts_r.append(flat[:, 1])
        parts_t.append(flat[:, 2])
        coeffs = np.concatenate([_sigmoid(f_pos), -_sigmoid(-f_neg)]) / n
    else:
        coeffs = _sigmoid(f_pos) / n
    return total / n, (np.concatenate(parts_h), np.concatenate(parts_r),
                       np.concatenate(parts_t), coeffs)


def _margin(params, positives, negatives, config):
    p = config.score_exponent
    n_pos, n_negs = negatives.shape[0], negatives.shape[1]
    f_pos = models.batch_scores(params, positives[:, 0], positives[:, 1],
                                positives[:, 2], p=p)
    flat = negatives.reshape(-1, 3)
    f_neg = models.batch_scores(params, flat[:, 0], flat[:, 1], flat[:, 2],
                                p=p).reshape(n_pos, n_negs)
    slack = f_pos[:, None] + config.margin - f_neg
    active = slack > 0
    n_pairs = n_pos * n_negs
    value = np.where(active, slack, 0.0).sum() / n_pairs
    pos_coeff = active.sum(axis=1).astype(np.float64) / n_pairs
    neg_coeff = -active.astype(np.float64).ravel() / n_pairs
    h = np.concatenate([positives[:, 0], flat[:, 0]])
    r = np.concatenate([positives[:, 1], flat[:, 1]])
    t = np.concatenate([positives[:, 2], flat[:, 2]])
    return value, (h, r, t, np.concatenate([pos_coeff, neg_coeff]))


def _crossentropy(params, positives, config):
    p = config.score_exponent
    n_pos = positives.shape[0]
    n_ent = params.n_entities
    h = np.repeat(positives[:, 0], n_ent)
    r = np.repeat(positives[:, 1], n_ent)
    t = np.tile(np.arange(n_ent, dtype=np.int64), n_pos)
    f_all = models.batch_scores(params, h, r, t, p=p).reshape(n_pos, n_ent)
    logits = -f_all
    shift = logits.max(axis=1, keepdims=True)
    logz = shift[:, 0] + np.log(np.exp(logits - shift).sum(axis=1))
    true = positives[:, 2]
    value = (logz + f_all[np.arange(n_pos), true]).sum() / n_pos
    probs = np.exp(logits - logz[:, None])
    coeffs = -probs
    coeffs[np.arange(n_pos), true] += 1.0
    return value, (h, r, t, coeffs.ravel() / n_pos)


def nssa_weights(params, negatives, config) -> np.ndarray:
    """Self-adversarial weights softmax(temperature * (margin - f_neg)),
    normalized per positive."""
    flat = negatives.reshape(-1, 3)
    f_neg = models.batch_scores(params, flat[:, 0], flat[:, 1], flat[:, 2],
                                p=config.score_exponent)
    f_neg = f_neg.reshape(negatives.shape[0], negatives.shape[1])
    logits = config.adversarial_temperature * (config.margin - f_neg)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def nssa_loss_value(params, positives, negatives, config,
                    weights: np.ndarray | None = None) -> float:
    """NSSA loss; ``weights`` may be supplied to evaluate the frozen-weight
    objective the gradient corresponds to."""
    p = config.score_exponent
    f_pos = models.batch_scores(params, positives[:, 0], positives[:, 1],
                                positives[:, 2], p=p)
    flat = negatives.reshape(-1, 3)
    f_neg = models.batch_scores(params, flat[:, 0], flat[:, 1], flat[:, 2],
                                p=p).reshape(negatives.shape[0], negatives.shape[1])
    if weights is None:
        weights = nssa_weights(params, negatives, config)
    per_pos = _softplus(f_pos - config.margin) \
        + (weights * _softplus(config.margin - f_neg)).sum(axis=1)
    return float(per_pos.mean())


def _nssa(params, positives, negatives, config):
    p = config.score_exponent
    n_pos = positives.shape[0]
    f_pos = models.batch_scores(params, positives[:, 0], positives[:, 1],
                                positives[:, 2], p=p)
    flat = negatives.reshape(-1, 3)
    f_neg = models.batch_scores(params, flat[:, 0], flat[:, 1], flat[:, 2],
                                p=p).reshape(n_pos, negatives.shape[1])
    w = nssa_weights(params, negatives, config)
    value = (_softplus(f_pos - config.margin)
             + (w * _softplus(config.margin - f_neg)).sum(axis=1)).mean()
    pos_coeff = _sigmoid(f_pos - config.margin) / n_pos
    neg_coeff = -(w * _sigmoid(config.margin - f_neg)).ravel() / n_pos
    h = np.concatenate([positives[:, 0], flat[:, 0]])
    r = np.concatenate([positives[:, 1], flat[:, 1]])
    t = np.concatenate([positives[:, 2], flat[:, 2]])
    return value, (h, r, t, np.concatenate([pos_coeff, neg_coeff]))
