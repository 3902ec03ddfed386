"""Training loop: uniform negative sampling, Adam, checkpoints.

The schedule is serial and fully seeded, so two runs with the same graph
and config produce identical parameters.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import losses, models
from .errors import NumericError, UsageError, DataError
from .kg import KnowledgeGraph, Vocab, load_vocab, save_vocab

CORRUPT_TAIL = "corrupt_tail"
CORRUPT_BOTH = "corrupt_both"


@dataclass
class TrainConfig:
    loss: str = losses.CROSSENTROPY
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 128
    num_negs_per_pos: int = 1
    margin: float = 9.0
    adversarial_temperature: float = 1.0
    seed: int = 0
    score_exponent: int = 2
    negative_mode: str = CORRUPT_TAIL

    def __post_init__(self):
        if self.loss not in losses.LOSSES:
            raise UsageError(f"unknown loss {self.loss!r}")
        if self.lr <= 0:
            raise UsageError("lr must be positive")
        if self.margin < 0:
            raise UsageError("margin must be >= 0")
        if self.adversarial_temperature <= 0:
            raise UsageError("adversarial_temperature must be positive")
        if self.score_exponent not in (1, 2):
            raise UsageError("score_exponent must be 1 or 2")
        if self.loss in (losses.MARGIN, losses.NSSA) and self.num_negs_per_pos < 1:
            raise UsageError(f"{self.loss} loss requires num_negs_per_pos >= 1")
        if self.negative_mode not in (CORRUPT_TAIL, CORRUPT_BOTH):
            raise UsageError(f"unknown negative_mode {self.negative_mode!r}")


def sample_negatives(positives: np.ndarray, n: int, n_entities: int,
                     rng, mode: str = CORRUPT_TAIL) -> np.ndarray:
    """n corruptions per positive, uniform over entities != the original.

    ``rng`` may be a seed or a Generator. Returns (n_pos, n, 3).
    """
    if n < 1:
        raise UsageError("need at least one negative per positive")
    if n_entities < 2:
        raise UsageError("cannot corrupt triples with fewer than 2 entities")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    n_pos = positives.shape[0]
    out = np.repeat(positives[:, None, :], n, axis=1).copy()
    if mode == CORRUPT_TAIL:
        corrupt_head = np.zeros((n_pos, n), dtype=bool)
    elif mode == CORRUPT_BOTH:
        corrupt_head = rng.random((n_pos, n)) < 0.5
    else:
        raise UsageError(f"unknown corruption mode {mode!r}")
    original = np.where(corrupt_head, out[:, :, 0], out[:, :, 2])
    draw = rng.integers(0, n_entities - 1, size=(n_pos, n))
    draw = draw + (draw >= original)  # shift past the original: uniform over != it
    out[:, :, 0] = np.where(corrupt_head, draw, out[:, :, 0])
    out[:, :, 2] = np.where(corrupt_head, out[:, :, 2], draw)
    return out


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: models.ModelParams) -> "AdamState":
        state = cls()
        for name, arr in params.tensors().items():
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        return state


def adam_step(state: AdamState, params: models.ModelParams, grads: dict,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update in place; no weight decay. RotatE
    phases are re-wrapped into (-pi, pi] afterwards."""
    state.step += 1
    t = state.step
    for name, arr in params.tensors().items():
        g = grads[name]
        if g.shape != arr.shape:
            raise UsageError(f"gradient shape mismatch for {name!r}")
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1 ** t)
        v_hat = state.v[name] / (1 - beta2 ** t)
        arr -= lr * m_hat / (np.sqrt(v_hat) + eps)
    if params.rel_phase is not None:
        params.rel_phase = np.pi - np.remainder(np.pi - params.rel_phase, 2 * np.pi)


def train(graph: KnowledgeGraph, family: str, d: int,
          config: TrainConfig) -> tuple[models.ModelParams, list[tuple[int, float]]]:
    """Train a transductive model; returns final params and per-epoch mean
    loss history [(epoch, mean_loss), ...].

    On a numeric failure the raised error carries the parameters from the
    last completed epoch as ``exc.last_params``.
    """
    if graph.n_triples == 0:
        raise UsageError("cannot train on an empty graph")
    models.check_family(family, d)
    rng = np.random.default_rng(config.seed)
    params = models.init_params(family, d, graph.n_entities, graph.n_relations,
                                seed=config.seed)
    state = AdamState.for_params(params)
    history: list[tuple[int, float]] = []
    last_good = params.copy()
    needs_negs = config.loss in (losses.MARGIN, losses.NSSA, losses.BCE)
    triples = graph.triples
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(triples.shape[0])
        loss_sum = 0.0
        seen = 0
        for start in range(0, len(perm), config.batch_size):
            pos = triples[perm[start:start + config.batch_size]]
            negs = None
            if needs_negs and config.num_negs_per_pos >= 1:
                negs = sample_negatives(pos, config.num_negs_per_pos,
                                        graph.n_entities, rng, config.negative_mode)
            try:
                value, grads = losses.loss_and_grad(params, pos, negs, config)
            except NumericError as exc:
                exc.last_params = last_good
                raise
            adam_step(state, params, grads, config.lr)
            loss_sum += value * pos.shape[0]
            seen += pos.shape[0]
        history.append((epoch, loss_sum / seen))
        last_good = params.copy()
    return params, history


def save_history_csv(path: str, history) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, mean_loss in history:
            writer.writerow([epoch, repr(mean_loss)])


# ---------------------------------------------------------------------------
# Checkpoints: meta.json + one raw little-endian float64 file per tensor.

CHECKPOINT_VERSION = 1


def _write_tensor(path: str, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype="<f8").tofile(path)


def _read_tensor(path: str, shape) -> np.ndarray:
    arr = np.fromfile(path, dtype="<f8")
    expected = int(np.prod(shape)) if shape else 0
    if arr.size != expected:
        raise DataError(f"tensor file {path} has {arr.size} values, expected {expected}")
    return arr.reshape(shape)


def save_checkpoint(dirpath: str, params: models.ModelParams,
                    entities: Vocab, relations: Vocab,
                    config: TrainConfig | None = None,
                    extra_meta: dict | None = None) -> None:
    os.makedirs(dirpath, exist_ok=True)
    tensors = {}
    for name, arr in params.tensors().items():
        fname = f"{name}.f64"
        _write_tensor(os.path.join(dirpath, fname), arr)
        tensors[name] = {"file": fname, "shape": list(arr.shape)}
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "family": params.family,
        "d": params.dim,
        "n_entities": params.n_entities,
        "n_relations": params.n_relations,
        "tensors": tensors,
    }
    if config is not None:
        meta["config"] = asdict(config)
        meta["seed"] = config.seed
        meta["p"] = config.score_exponent
    if extra_meta:
        meta.update(extra_meta)
    with open(os.path.join(dirpath, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    save_vocab(entities, os.path.join(dirpath, "entities.tsv"))
    save_vocab(relations, os.path.join(dirpath, "relations.tsv"))


def load_checkpoint(dirpath: str):
    """Returns (params, meta, entity vocab, relation vocab)."""
    with open(os.path.join(dirpath, "meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {meta.get('format_version')}")
    kw = {}
    for name, info in meta["tensors"].items():
        kw[name] = _read_tensor(os.path.join(dirpath, info["file"]), info["shape"])
    params = models.ModelParams(family=meta["family"], **kw)
    entities = load_vocab(os.path.join(dirpath, "entities.tsv"))
    relations = load_vocab(os.path.join(dirpath, "relations.tsv"))
    return params, meta, entities, relations
