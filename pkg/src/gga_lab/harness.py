"""Training loops, evaluation, multi-seed protocol and sensitivity sweeps."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import model
from .data import CompositeMinibatch, Domain, DomainDataset, SOURCE, TARGET, fixed_split, \
    leave_one_out_splits, sample_composite
from .errors import ConfigError, DomainError
from .metrics import mean_gradient, similarity_stats, domain_losses_and_grads
from .model import ModelSpec
from .optim import AdamState, AnnealConfig, GgaLConfig, adam_step, gga_anneal, ggal_alpha, \
    ggal_noise, sgd_step

log = logging.getLogger(__name__)

METHODS = ("erm", "gga", "gga-l")
OPTIMIZERS = ("sgd", "adam")
SELECTIONS = ("source-val", "oracle", "last")

# Every random stream is SeedSequence(seed, spawn_key=(split, replicate, tag)).
PURPOSE_TAGS = {"split": 1, "init": 2, "batch": 3, "anneal": 4, "noise": 5}


def derive_rng(seed: int, split: int, replicate: int, purpose: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(split, replicate, PURPOSE_TAGS[purpose]))
    return np.random.default_rng(ss)


def derive_seed(seed: int, split: int, replicate: int, purpose: str) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(split, replicate, PURPOSE_TAGS[purpose]))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class TrainConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    optimizer: str = "sgd"
    lr: float = 0.05
    weight_decay: float = 1e-4
    batch_size: int = 32
    iterations: int = 2000
    method: str = "erm"
    anneal: AnnealConfig = field(default_factory=AnnealConfig)
    ggal: GgaLConfig = field(default_factory=GgaLConfig)
    seed: int = 0
    val_fraction: float = 0.2
    eval_every: int = 100
    selection: str = "source-val"
    record_timing: bool = False

    def validate(self) -> "TrainConfig":
        self.model.validate()
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.selection not in SELECTIONS:
            raise ConfigError(f"selection must be one of {SELECTIONS}, got {self.selection!r}")
        if not self.lr > 0:
            raise ConfigError("learning rate must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        self.anneal.validate()
        self.ggal.validate()
        if self.method == "gga" and self.iterations < self.anneal.a_end:
            raise ConfigError(f"iterations ({self.iterations}) must be >= a_end ({self.anneal.a_end})")
        return self


@dataclass
class TelemetryRecord:
    t: int
    loss: float
    domain_losses: dict[str, float]
    min_sim: float | None
    mean_sim: float | None
    accepted: int
    theta_norm: float
    ms: float | None

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "loss": self.loss,
            "domain_losses": self.domain_losses,
            "min_sim": self.min_sim,
            "mean_sim": self.mean_sim,
            "accepted": self.accepted,
            "theta_norm": self.theta_norm,
            "ms": self.ms,
        }


@dataclass
class AnnealRecord:
    t: int
    baseline_sim: float
    final_sim: float
    accepted: int


@dataclass
class RunResult:
    target_acc: float
    source_val_acc: float
    telemetry: list[TelemetryRecord]
    theta: np.ndarray
    selected_t: int
    anneal_log: list[AnnealRecord] = field(default_factory=list)


# --------------------------------------------------------------------------
# evaluation


def evaluate(spec: ModelSpec, theta, X, y) -> float:
    y = np.asarray(y)
    if y.shape[0] == 0:
        raise DomainError("cannot evaluate on an empty set")
    return float(np.mean(model.predict(spec, theta, X) == y))


def domain_reliance(spec: ModelSpec, theta, X, class_coord: int = 0, domain_coord: int = 1) -> float:
    """Share of the logit's input sensitivity that goes to the domain coordinate, averaged
    over samples. Samples where both sensitivities vanish count as 0."""
    J = np.abs(model.input_gradient(spec, theta, X))
    gc, gd = J[:, class_coord], J[:, domain_coord]
    denom = gc + gd
    ratio = np.divide(gd, denom, out=np.zeros_like(gd), where=denom > 0)
    return float(np.mean(ratio))


# --------------------------------------------------------------------------
# training


def _split_validation(dataset: DomainDataset, sources: list[str], frac: float, rng):
    train, val = {}, {}
    for name in sources:
        dom = dataset.domains[name]
        n = len(dom)
        n_val = int(math.floor(frac * n)) if n > 1 else 0
        perm = rng.permutation(n)
        vi, ti = perm[:n_val], perm[n_val:]
        train[name] = Domain(dom.features[ti], dom.labels[ti], SOURCE)
        if n_val:
            val[name] = (dom.features[vi], dom.labels[vi])
    return DomainDataset(train), val


def _report_stats(grads: dict[str, np.ndarray]):
    if len(grads) < 2:
        return None, None
    _, lo, mean = similarity_stats(grads)
    return lo, mean


def train(dataset: DomainDataset, cfg: TrainConfig, split_index: int = 0, replicate: int = 0) -> RunResult:
    """Train on the dataset's source domains and evaluate on its target domains."""
    cfg.validate()
    sources, targets = dataset.source_names(), dataset.target_names()
    if not targets:
        raise ConfigError("dataset has no target domain")
    need = 1 if cfg.method == "erm" else 2
    if len(sources) < need:
        raise ConfigError(f"method {cfg.method!r} needs at least {need} source domains, got {len(sources)}")
    if dataset.n_features != cfg.model.input_dim:
        raise ConfigError(f"dataset has {dataset.n_features} features, model expects {cfg.model.input_dim}")

    spec, lam, lr = cfg.model, cfg.weight_decay, cfg.lr
    rs = lambda purpose: derive_rng(cfg.seed, split_index, replicate, purpose)  # noqa: E731
    train_set, val = _split_validation(dataset, sources, cfg.val_fraction, rs("split"))
    batch_rng, anneal_rng, noise_rng = rs("batch"), rs("anneal"), rs("noise")
    theta = model.build_model(spec, derive_seed(cfg.seed, split_index, replicate, "init"))
    adam = AdamState.zeros(theta.shape[0]) if cfg.optimizer == "adam" else None

    Xt, yt = dataset.pooled(targets)
    if val:
        Xv = np.concatenate([v[0] for v in val.values()])
        yv = np.concatenate([v[1] for v in val.values()])
    else:
        Xv, yv = train_set.pooled(sources)

    telemetry: list[TelemetryRecord] = []
    anneal_log: list[AnnealRecord] = []
    best = None  # (score, t, theta)

    for t in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        batch = sample_composite(train_set, cfg.batch_size, batch_rng)
        accepted = 0
        if cfg.method == "gga" and cfg.anneal.in_window(t):
            out = gga_anneal(spec, theta, batch, cfg.anneal, 0.0, anneal_rng)
            theta = out.theta_next
            accepted = out.accepted_candidates
            losses, grads = out.report.domain_losses, out.report.domain_grads
            anneal_log.append(AnnealRecord(t, out.baseline_sim, out.final_sim, accepted))
        else:
            losses, grads = domain_losses_and_grads(spec, theta, batch, 0.0)

        # weight decay enters the update only; similarities use the data loss alone
        direction = mean_gradient(list(grads.values())) + lam * theta
        min_sim, mean_sim = _report_stats(grads)
        if cfg.method == "gga-l":
            alpha = ggal_alpha(cfg.ggal.gamma, mean_sim)
            direction = direction + alpha * ggal_noise(noise_rng, theta.shape[0], cfg.ggal.centered)

        if adam is None:
            theta = sgd_step(theta, direction, lr)
        else:
            adam, theta = adam_step(adam, theta, direction, lr)
        if not np.all(np.isfinite(theta)):
            raise FloatingPointError(f"non-finite parameters at iteration {t}")

        telemetry.append(TelemetryRecord(
            t=t,
            loss=float(np.mean(list(losses.values()))),
            domain_losses={k: float(v) for k, v in losses.items()},
            min_sim=min_sim,
            mean_sim=mean_sim,
            accepted=accepted,
            theta_norm=float(np.linalg.norm(theta)),
            ms=(time.perf_counter() - t0) * 1e3 if cfg.record_timing else None,
        ))

        if t % cfg.eval_every == 0 or t == cfg.iterations:
            if cfg.selection == "oracle":
                score = evaluate(spec, theta, Xt, yt)
            elif cfg.selection == "source-val":
                score = evaluate(spec, theta, Xv, yv)
            else:
                score = 0.0
            # ties go to the later checkpoint
            if best is None or score >= best[0]:
                best = (score, t, theta.copy())

    _, selected_t, theta_sel = best
    return RunResult(
        target_acc=evaluate(spec, theta_sel, Xt, yt),
        source_val_acc=evaluate(spec, theta_sel, Xv, yv),
        telemetry=telemetry,
        theta=theta_sel,
        selected_t=selected_t,
        anneal_log=anneal_log,
    )


# --------------------------------------------------------------------------
# protocol


@dataclass
class SplitSummary:
    split: int
    target_domain: str
    method: str
    seed_count: int
    mean_acc: float
    stderr: float
    accs: list[float] = field(default_factory=list)

    def csv_row(self) -> list:
        return [self.split, self.target_domain, self.method, self.seed_count,
                repr(self.mean_acc), repr(self.stderr)]


SUMMARY_HEADER = ["split", "target_domain", "method", "seed_count", "mean_acc", "stderr"]


@dataclass
class ProtocolResult:
    summaries: list[SplitSummary]
    runs: dict[tuple[int, int], RunResult]


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise DomainError("no values to aggregate")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def protocol_splits(dataset: DomainDataset, splits: str) -> list[tuple[list[str], list[str]]]:
    if splits == "fixed":
        return fixed_split(dataset)
    if splits == "leave-one-out":
        return [(src, [tgt]) for src, tgt in leave_one_out_splits(dataset)]
    raise ConfigError(f"splits must be 'fixed' or 'leave-one-out', got {splits!r}")


def _relabel(dataset: DomainDataset, targets: list[str]) -> DomainDataset:
    return DomainDataset({
        k: replace(d, role=TARGET if k in targets else SOURCE) for k, d in dataset.domains.items()
    })


def _run_one(args):
    dataset, cfg, split_index, replicate = args
    return train(dataset, cfg, split_index=split_index, replicate=replicate)


def run_protocol(dataset: DomainDataset, cfg: TrainConfig, n_seeds: int, splits: str = "fixed",
                 jobs: int = 1) -> ProtocolResult:
    """One training run per (split, seed); target accuracy aggregated per split."""
    if n_seeds < 1:
        raise ConfigError("n_seeds must be >= 1")
    cfg.validate()
    plan = protocol_splits(dataset, splits)
    tasks, keys = [], []
    for si, (_, targets) in enumerate(plan):
        ds = _relabel(dataset, targets)
        for r in range(n_seeds):
            tasks.append((ds, cfg, si, r))
            keys.append((si, r))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    runs = dict(zip(keys, results))

    summaries = []
    for si, (_, targets) in enumerate(plan):
        accs = [runs[(si, r)].target_acc for r in range(n_seeds)]
        mean, se = mean_stderr(accs)
        summaries.append(SplitSummary(si, "+".join(targets), cfg.method, n_seeds, mean, se, accs))
        log.info("split %d target=%s %s acc=%.4f +- %.4f", si, "+".join(targets), cfg.method, mean, se)
    return ProtocolResult(summaries, runs)


# --------------------------------------------------------------------------
# sensitivity sweep


SWEEP_HEADER = ["rho", "a_start", "a_end"] + SUMMARY_HEADER


def named_windows(iterations: int, length: int = 100, start: int = 100) -> dict[str, tuple[int, int]]:
    """Early / mid / late annealing windows of equal length for a run of ``iterations`` steps."""
    mid = iterations // 2
    return {
        "early": (start, start + length),
        "mid": (mid - length // 2, mid + length - length // 2),
        "late": (iterations - length, iterations),
    }


@dataclass
class SweepRow:
    rho: float
    a_start: int
    a_end: int
    summary: SplitSummary

    def csv_row(self) -> list:
        return [repr(self.rho), self.a_start, self.a_end] + self.summary.csv_row()


def sensitivity_sweep(dataset: DomainDataset, base: TrainConfig, rho_grid=None, window_grid=None,
                      n_seeds: int = 3, splits: str = "fixed", jobs: int = 1) -> list[SweepRow]:
    """Vary the perturbation size and/or annealing window around ``base``; one protocol per grid point."""
    rho_grid = list(rho_grid or [])
    window_grid = list(window_grid or [])
    if not rho_grid and not window_grid:
        raise ConfigError("sensitivity sweep needs a non-empty rho grid or window grid")
    rhos = rho_grid or [base.anneal.rho]
    windows = window_grid or [(base.anneal.a_start, base.anneal.a_end)]
    rows = []
    for rho in rhos:
        for a_s, a_e in windows:
            cfg = replace(base, anneal=replace(base.anneal, rho=float(rho), a_start=int(a_s), a_end=int(a_e)))
            res = run_protocol(dataset, cfg, n_seeds, splits=splits, jobs=jobs)
            rows.extend(SweepRow(float(rho), int(a_s), int(a_e), s) for s in res.summaries)
    return rows
