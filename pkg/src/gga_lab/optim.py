"""Parameter updates: SGD, Adam, gradient-guided annealing and its noisy-gradient variant."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CompositeMinibatch
from .errors import ConfigError, PreconditionError, ShapeError
from .metrics import GradReport, batch_sim_and_loss, domain_losses_and_grads, grad_report, \
    mean_gradient, prepare_composite
from .model import ModelSpec

ANNEAL_MODES = ("relaxed", "strict-pareto")


@dataclass
class AnnealConfig:
    rho: float = 1e-5
    a_start: int = 100
    a_end: int = 200
    n_a: int = 250
    eps: float = 0.1
    mode: str = "relaxed"

    def validate(self) -> "AnnealConfig":
        if not self.rho > 0:
            raise ConfigError(f"rho must be > 0, got {self.rho}")
        if not 0 <= self.a_start <= self.a_end:
            raise ConfigError(f"need 0 <= a_start <= a_end, got {self.a_start}..{self.a_end}")
        if self.n_a < 1:
            raise ConfigError("n_a must be >= 1")
        if not self.eps >= 0:
            raise ConfigError("eps must be >= 0")
        if self.mode not in ANNEAL_MODES:
            raise ConfigError(f"mode must be one of {ANNEAL_MODES}, got {self.mode!r}")
        return self

    def in_window(self, t: int) -> bool:
        return self.a_start <= t <= self.a_end


@dataclass
class GgaLConfig:
    gamma: float = 1e-3
    # zero-mean noise U(-0.5, 0.5) instead of U(0, 1)
    centered: bool = False

    def validate(self) -> "GgaLConfig":
        if not self.gamma >= 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        return self


@dataclass
class StepOutcome:
    theta_next: np.ndarray
    accepted_candidates: int
    final_sim: float
    final_loss: float
    candidates_evaluated: int
    baseline_sim: float = float("nan")
    baseline_loss: float = float("nan")
    accepted_indices: list[int] = field(default_factory=list)
    candidate_sims: np.ndarray | None = None
    candidate_losses: np.ndarray | None = None
    report: GradReport | None = None
    alpha: float = 0.0


# --------------------------------------------------------------------------
# plain updates


def sgd_step(theta, grad, lr: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if theta.shape != grad.shape:
        raise ShapeError(f"theta {theta.shape} and grad {grad.shape} differ")
    return theta - lr * grad


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(np.zeros(dim), np.zeros(dim), 0)


def adam_step(state: AdamState, theta, grad, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> tuple[AdamState, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if not (state.m.shape == state.v.shape == theta.shape == grad.shape):
        raise ShapeError("Adam state, theta and grad must share a shape")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return AdamState(m, v, t), theta - lr * m_hat / (np.sqrt(v_hat) + eps)


def total_gradient(spec: ModelSpec, theta, composite: CompositeMinibatch, lam: float = 0.0) -> np.ndarray:
    """Equal-weight mean of the per-domain gradients."""
    if len(composite) == 0:
        raise PreconditionError("empty composite minibatch")
    _, grads = domain_losses_and_grads(spec, theta, composite, lam)
    return mean_gradient(list(grads.values()))


# --------------------------------------------------------------------------
# gradient-guided annealing


def accepts(mode: str, sim_a: float, sim: float, loss_a: float, loss_ref: float, eps: float) -> bool:
    if not sim_a > sim:
        return False
    if mode == "relaxed":
        return loss_a - loss_ref < eps
    return loss_a < loss_ref


def draw_perturbations(rng: np.random.Generator, n_a: int, dim: int, rho: float) -> np.ndarray:
    """All candidate offsets for one annealing step; row ``a`` belongs to candidate ``a``."""
    return rng.uniform(-rho, rho, size=(n_a, dim))


def scan_candidates(mode: str, eps: float, sim: float, loss_ref: float,
                    cand_sims: np.ndarray, cand_losses: np.ndarray) -> list[int]:
    """Indices of accepted candidates, resolved strictly in candidate order."""
    accepted = []
    for a in range(cand_sims.shape[0]):
        if accepts(mode, cand_sims[a], sim, cand_losses[a], loss_ref, eps):
            sim, loss_ref = cand_sims[a], cand_losses[a]
            accepted.append(a)
    return accepted


def gga_anneal(spec: ModelSpec, theta_t, composite: CompositeMinibatch, cfg: AnnealConfig,
               lam: float, rng: np.random.Generator) -> StepOutcome:
    """Search the box ``theta_t +- rho`` for parameters with better domain-gradient agreement.

    Candidates are always centered on ``theta_t``. A candidate is taken when
    its minimum pairwise similarity beats the best so far and its loss passes
    the mode's test against the loss of the current best point. Candidates
    are scored as one batch; acceptance is a sequential scan over that batch.
    """
    cfg.validate()
    theta_t = np.asarray(theta_t, dtype=float)
    if len(composite.parts) < 2:
        raise PreconditionError("gradient-guided annealing needs at least 2 source domains")
    prepared = prepare_composite(spec, composite)
    base_sim, _, base_loss = batch_sim_and_loss(spec, theta_t[None, :], composite, lam, prepared)
    sim, loss_ref = float(base_sim[0]), float(base_loss[0])

    offsets = draw_perturbations(rng, cfg.n_a, theta_t.shape[0], cfg.rho)
    candidates = theta_t[None, :] + offsets
    cand_sims, _, cand_losses = batch_sim_and_loss(spec, candidates, composite, lam, prepared)
    accepted = scan_candidates(cfg.mode, cfg.eps, sim, loss_ref, cand_sims, cand_losses)

    if accepted:
        last = accepted[-1]
        theta_next = candidates[last]
        final_sim, final_loss = float(cand_sims[last]), float(cand_losses[last])
    else:
        theta_next, final_sim, final_loss = theta_t, sim, loss_ref

    return StepOutcome(
        theta_next=theta_next,
        accepted_candidates=len(accepted),
        final_sim=final_sim,
        final_loss=final_loss,
        candidates_evaluated=cfg.n_a,
        baseline_sim=sim,
        baseline_loss=loss_ref,
        accepted_indices=accepted,
        candidate_sims=cand_sims,
        candidate_losses=cand_losses,
        report=grad_report(spec, theta_next, composite, lam),
    )


# --------------------------------------------------------------------------
# noisy-gradient variant


def ggal_alpha(gamma: float, mean_sim: float) -> float:
    return gamma * (1.0 - mean_sim)


def ggal_noise(rng: np.random.Generator, dim: int, centered: bool = False) -> np.ndarray:
    xi = rng.uniform(0.0, 1.0, size=dim)
    return xi - 0.5 if centered else xi


def ggal_direction(spec: ModelSpec, theta, composite: CompositeMinibatch, cfg: GgaLConfig,
                   lam: float, rng: np.random.Generator) -> tuple[np.ndarray, GradReport, float]:
    """Noisy descent direction ``grad + alpha * xi`` together with the report it came from."""
    cfg.validate()
    rep = grad_report(spec, theta, composite, lam)
    alpha = ggal_alpha(cfg.gamma, rep.mean_sim)
    xi = ggal_noise(rng, rep.total_grad.shape[0], cfg.centered)
    return rep.total_grad + alpha * xi, rep, alpha


def gga_l_step(spec: ModelSpec, theta, composite: CompositeMinibatch, cfg: GgaLConfig,
               lr: float, lam: float, rng: np.random.Generator) -> StepOutcome:
    direction, rep, alpha = ggal_direction(spec, theta, composite, cfg, lam, rng)
    return StepOutcome(
        theta_next=sgd_step(theta, direction, lr),
        accepted_candidates=0,
        final_sim=rep.mean_sim,
        final_loss=rep.total_loss,
        candidates_evaluated=0,
        baseline_sim=rep.min_sim,
        baseline_loss=rep.total_loss,
        report=rep,
        alpha=alpha,
    )
