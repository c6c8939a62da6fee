"""Per-domain gradients and their pairwise cosine similarities."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import model
from .data import CompositeMinibatch
from .errors import PreconditionError, ShapeError

# below this norm a gradient carries no usable direction
NORM_FLOOR = 1e-30


def cosine_rows(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity of two (m, P) stacks; rows with a vanishing norm give 0."""
    dot = (A * B).sum(-1)
    na = np.sqrt((A * A).sum(-1))
    nb = np.sqrt((B * B).sum(-1))
    ok = (na >= NORM_FLOOR) & (nb >= NORM_FLOOR)
    out = np.zeros(dot.shape)
    np.divide(dot, na * nb, out=out, where=ok)
    return np.clip(out, -1.0, 1.0)


def cosine(g_i, g_j) -> float:
    g_i = np.asarray(g_i, dtype=float)
    g_j = np.asarray(g_j, dtype=float)
    if g_i.shape != g_j.shape or g_i.ndim != 1:
        raise ShapeError(f"cannot compare gradients of shapes {g_i.shape} and {g_j.shape}")
    return float(cosine_rows(g_i[None, :], g_j[None, :])[0])


@dataclass
class GradReport:
    domain_grads: dict[str, np.ndarray]
    domain_losses: dict[str, float]
    pairwise_sims: dict[tuple[str, str], float]
    min_sim: float
    mean_sim: float

    @property
    def total_loss(self) -> float:
        """Mean of per-domain losses (the composite-batch loss for equal sub-batch sizes)."""
        return float(np.array(list(self.domain_losses.values())).mean())

    @property
    def total_grad(self) -> np.ndarray:
        return mean_gradient(list(self.domain_grads.values()))


def mean_gradient(grads) -> np.ndarray:
    return np.mean(np.stack(grads), axis=0)


def similarity_stats(grads: dict[str, np.ndarray]) -> tuple[dict, float, float]:
    names = list(grads)
    sims = {(a, b): cosine(grads[a], grads[b]) for a, b in itertools.combinations(names, 2)}
    vals = np.array(list(sims.values()))
    return sims, float(vals.min()), float(vals.mean())


def grad_report(spec: model.ModelSpec, theta, composite: CompositeMinibatch, lam: float = 0.0) -> GradReport:
    if len(composite.parts) < 2:
        raise PreconditionError("gradient similarity needs at least 2 source domains")
    grads, losses = {}, {}
    for name, (X, y) in composite.parts.items():
        losses[name], grads[name] = model.value_and_grad(spec, theta, X, y, lam)
    sims, lo, mean = similarity_stats(grads)
    return GradReport(grads, losses, sims, lo, mean)


def domain_losses_and_grads(spec, theta, composite: CompositeMinibatch, lam: float = 0.0):
    """Like :func:`grad_report` without the similarity part; works for a single domain."""
    grads, losses = {}, {}
    for name, (X, y) in composite.parts.items():
        losses[name], grads[name] = model.value_and_grad(spec, theta, X, y, lam)
    return losses, grads


def batch_sim_and_loss(spec, thetas: np.ndarray, composite: CompositeMinibatch, lam: float = 0.0,
                       prepared=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimum pairwise similarity, mean pairwise similarity and composite loss for
    every row of ``thetas``. Row ``i`` matches :func:`grad_report` on ``thetas[i]`` bit for bit."""
    if len(composite.parts) < 2:
        raise PreconditionError("gradient similarity needs at least 2 source domains")
    if prepared is None:
        prepared = prepare_composite(spec, composite)
    losses, grads = [], []
    for phi, y in prepared:
        l, g = model.batch_value_and_grad(spec, thetas, phi, y, lam)
        losses.append(l)
        grads.append(g)
    pair_sims = np.stack([cosine_rows(grads[i], grads[j])
                          for i, j in itertools.combinations(range(len(grads)), 2)], axis=-1)
    total = np.stack(losses, axis=-1).mean(-1)
    return pair_sims.min(-1), pair_sims.mean(-1), total


def prepare_composite(spec, composite: CompositeMinibatch):
    return [(model.prepare(spec, X), np.asarray(y, dtype=np.int64)) for X, y in composite.parts.values()]
