"""Synthetic multi-domain datasets, composite minibatches and domain splits."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError

SOURCE = "source"
TARGET = "target"


@dataclass
class Domain:
    features: np.ndarray
    labels: np.ndarray
    role: str = SOURCE

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass
class DomainDataset:
    """Labeled samples grouped by domain name. Dict order is the canonical domain order."""

    domains: dict[str, Domain]

    def __post_init__(self):
        if not self.domains:
            raise ConfigError("dataset has no domains")
        widths = {d.features.shape[1] for d in self.domains.values()}
        if len(widths) != 1:
            raise ConfigError(f"domains disagree on feature width: {sorted(widths)}")
        for name, d in self.domains.items():
            if len(d) == 0:
                raise ConfigError(f"domain {name!r} is empty")
            if d.role not in (SOURCE, TARGET):
                raise ConfigError(f"domain {name!r} has unknown role {d.role!r}")

    @property
    def names(self) -> list[str]:
        return list(self.domains)

    @property
    def n_features(self) -> int:
        return next(iter(self.domains.values())).features.shape[1]

    def source_names(self) -> list[str]:
        return [k for k, d in self.domains.items() if d.role == SOURCE]

    def target_names(self) -> list[str]:
        return [k for k, d in self.domains.items() if d.role == TARGET]

    def with_target(self, target: str) -> "DomainDataset":
        if target not in self.domains:
            raise ConfigError(f"unknown domain {target!r}")
        return DomainDataset({
            k: replace(d, role=TARGET if k == target else SOURCE) for k, d in self.domains.items()
        })

    def pooled(self, names) -> tuple[np.ndarray, np.ndarray]:
        names = list(names)
        X = np.concatenate([self.domains[k].features for k in names])
        y = np.concatenate([self.domains[k].labels for k in names])
        return X, y


# --------------------------------------------------------------------------
# Gaussian toy problem


@dataclass
class GaussianToyConfig:
    """Two source domains x two classes of isotropic Gaussians plus a shifted target domain.

    Samples are drawn from N(mean, variance * I2). The class is encoded by x1,
    the domain by x2.
    """

    source_means: list[list[list[float]]] = field(default_factory=lambda: [
        [[-2.5, -2.5], [2.5, -2.5]],  # domain 1: class 0, class 1
        [[-2.5, 2.5], [2.5, 2.5]],    # domain 2
    ])
    target_means: list[list[float]] = field(default_factory=lambda: [[-2.5, -7.5], [2.5, -7.5]])
    variance: float = 0.5
    n_per_cell: int = 200
    n_target_per_class: int = 200

    def validate(self) -> "GaussianToyConfig":
        if not self.variance > 0:
            raise ConfigError("variance must be positive")
        if self.n_per_cell < 1 or self.n_target_per_class < 1:
            raise ConfigError("sample counts must be >= 1")
        means = np.asarray(self.source_means, dtype=float)
        tmeans = np.asarray(self.target_means, dtype=float)
        if means.ndim != 3 or tmeans.ndim != 2 or means.shape[1:] != tmeans.shape:
            raise ConfigError("source_means must be [domain][class][coord] matching target_means [class][coord]")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(tmeans))):
            raise ConfigError("means must be finite")
        if means.shape[0] < 1:
            raise ConfigError("need at least one source domain")
        return self


def _gaussian_cells(rng, means, variance, n) -> tuple[np.ndarray, np.ndarray]:
    std = np.sqrt(variance)
    X, y = [], []
    for label, mu in enumerate(means):
        mu = np.asarray(mu, dtype=float)
        X.append(mu + std * rng.standard_normal((n, mu.shape[0])))
        y.append(np.full(n, label, dtype=np.int64))
    return np.concatenate(X), np.concatenate(y)


def make_gaussian_toy(cfg: GaussianToyConfig | None = None, seed: int = 0) -> DomainDataset:
    cfg = (cfg or GaussianToyConfig()).validate()
    rng = np.random.default_rng(seed)
    domains = {}
    for i, means in enumerate(cfg.source_means):
        X, y = _gaussian_cells(rng, means, cfg.variance, cfg.n_per_cell)
        domains[f"d{i + 1}"] = Domain(X, y, SOURCE)
    X, y = _gaussian_cells(rng, cfg.target_means, cfg.variance, cfg.n_target_per_class)
    domains[f"d{len(cfg.source_means) + 1}"] = Domain(X, y, TARGET)
    return DomainDataset(domains)


# --------------------------------------------------------------------------
# latent-factor generative model


@dataclass
class GenerativeConfig:
    """x = f(A z_y + B z_d + C e), with z_y ~ N(class mean, I), z_d ~ N(domain mean, I), e ~ N(0, I).

    ``mixing`` selects f: identity (``linear``) or elementwise tanh (``tanh``).
    Empty mean lists fall back to evenly spaced defaults.
    """

    n_classes: int = 2
    n_domains: int = 3
    class_priors: list[float] = field(default_factory=list)
    domain_priors: list[float] = field(default_factory=list)
    class_dim: int = 2
    domain_dim: int = 2
    noise_dim: int = 2
    x_dim: int = 4
    class_means: list[list[float]] = field(default_factory=list)
    domain_means: list[list[float]] = field(default_factory=list)
    mixing: str = "linear"
    mixing_seed: int = 0
    domain_scale: float = 1.0
    noise_scale: float = 0.5
    stratified: bool = True
    n_per_domain: int = 200
    target_domains: list[int] = field(default_factory=lambda: [-1])

    def validate(self) -> "GenerativeConfig":
        if self.n_classes < 2 or self.n_domains < 2:
            raise ConfigError("need n_classes >= 2 and n_domains >= 2")
        for name, pri, n in (("class_priors", self.class_priors, self.n_classes),
                             ("domain_priors", self.domain_priors, self.n_domains)):
            if pri:
                p = np.asarray(pri, dtype=float)
                if p.shape != (n,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                    raise ConfigError(f"{name} must be {n} nonnegative numbers summing to 1")
        if min(self.class_dim, self.domain_dim, self.noise_dim, self.x_dim) < 1:
            raise ConfigError("latent and observed dimensions must be >= 1")
        if self.class_means and np.shape(self.class_means) != (self.n_classes, self.class_dim):
            raise ConfigError("class_means must be n_classes x class_dim")
        if self.domain_means and np.shape(self.domain_means) != (self.n_domains, self.domain_dim):
            raise ConfigError("domain_means must be n_domains x domain_dim")
        if self.mixing not in ("linear", "tanh"):
            raise ConfigError(f"mixing must be 'linear' or 'tanh', got {self.mixing!r}")
        if self.n_per_domain < 1:
            raise ConfigError("n_per_domain must be >= 1")
        for t in self.target_domains:
            if not -self.n_domains <= t < self.n_domains:
                raise ConfigError(f"target domain index {t} out of range")
        return self

    def resolved_class_means(self) -> np.ndarray:
        if self.class_means:
            return np.asarray(self.class_means, dtype=float)
        return _spread_means(self.n_classes, self.class_dim, 2.0)

    def resolved_domain_means(self) -> np.ndarray:
        if self.domain_means:
            return np.asarray(self.domain_means, dtype=float)
        return _spread_means(self.n_domains, self.domain_dim, 3.0)


def _spread_means(n: int, dim: int, scale: float) -> np.ndarray:
    # points evenly spaced on [-scale, scale] along the first latent axis
    out = np.zeros((n, dim))
    out[:, 0] = np.linspace(-scale, scale, n)
    return out


def mixing_matrices(cfg: GenerativeConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(cfg.mixing_seed)
    A = rng.standard_normal((cfg.x_dim, cfg.class_dim)) / np.sqrt(cfg.class_dim)
    B = rng.standard_normal((cfg.x_dim, cfg.domain_dim)) / np.sqrt(cfg.domain_dim)
    C = rng.standard_normal((cfg.x_dim, cfg.noise_dim)) / np.sqrt(cfg.noise_dim)
    return A, cfg.domain_scale * B, cfg.noise_scale * C


def make_generative(cfg: GenerativeConfig | None = None, n_per_domain: int | None = None,
                    seed: int = 0) -> DomainDataset:
    cfg = (cfg or GenerativeConfig()).validate()
    n = cfg.n_per_domain if n_per_domain is None else int(n_per_domain)
    if n < 1:
        raise ConfigError("n_per_domain must be >= 1")
    rng = np.random.default_rng(seed)
    K, L = cfg.n_classes, cfg.n_domains
    p = np.asarray(cfg.class_priors or [1.0 / K] * K)
    q = np.asarray(cfg.domain_priors or [1.0 / L] * L)

    if cfg.stratified:
        d = np.repeat(np.arange(L), n)
    else:
        d = np.sort(rng.choice(L, size=n * L, p=q))
    y = rng.choice(K, size=d.shape[0], p=p)

    A, B, C = mixing_matrices(cfg)
    zy = cfg.resolved_class_means()[y] + rng.standard_normal((y.shape[0], cfg.class_dim))
    zd = cfg.resolved_domain_means()[d] + rng.standard_normal((y.shape[0], cfg.domain_dim))
    e = rng.standard_normal((y.shape[0], cfg.noise_dim))
    X = zy @ A.T + zd @ B.T + e @ C.T
    if cfg.mixing == "tanh":
        X = np.tanh(X)

    targets = {t % L for t in cfg.target_domains}
    domains = {}
    for k in range(L):
        mask = d == k
        if not mask.any():
            raise ConfigError(f"domain {k} received no samples; increase n_per_domain or use stratified")
        domains[f"d{k + 1}"] = Domain(X[mask], y[mask], TARGET if k in targets else SOURCE)
    return DomainDataset(domains)


# --------------------------------------------------------------------------
# sampling and splitting


@dataclass
class CompositeMinibatch:
    """Per-domain sub-batches drawn at the same step; order follows the dataset."""

    parts: dict[str, tuple[np.ndarray, np.ndarray]]

    @property
    def names(self) -> list[str]:
        return list(self.parts)

    def concatenated(self) -> tuple[np.ndarray, np.ndarray]:
        X = np.concatenate([p[0] for p in self.parts.values()])
        y = np.concatenate([p[1] for p in self.parts.values()])
        return X, y

    def __len__(self) -> int:
        return sum(p[1].shape[0] for p in self.parts.values())


def sample_composite(dataset: DomainDataset, b: int, rng: np.random.Generator,
                     domains=None) -> CompositeMinibatch:
    """Draw ``b`` samples from every source domain.

    Domains with at least ``b`` samples are sampled without replacement,
    smaller ones with replacement so that every domain contributes exactly ``b``.
    """
    if b <= 0:
        raise ConfigError(f"per-domain batch size must be positive, got {b}")
    names = dataset.source_names() if domains is None else list(domains)
    parts = {}
    for name in names:
        dom = dataset.domains[name]
        n = len(dom)
        idx = rng.choice(n, size=b, replace=n < b)
        parts[name] = (dom.features[idx], dom.labels[idx])
    return CompositeMinibatch(parts)


def leave_one_out_splits(dataset: DomainDataset) -> list[tuple[list[str], str]]:
    names = dataset.names
    if len(names) < 2:
        raise ConfigError("leave-one-domain-out needs at least 2 domains")
    return [([n for n in names if n != target], target) for target in names]


def fixed_split(dataset: DomainDataset) -> list[tuple[list[str], list[str]]]:
    """The dataset's own source/target roles as a single split."""
    sources, targets = dataset.source_names(), dataset.target_names()
    if not sources or not targets:
        raise ConfigError("fixed split needs at least one source and one target domain")
    return [(sources, targets)]


def export_csv(dataset: DomainDataset, path) -> int:
    """Write ``x1..xn,label,domain,role`` rows; returns the number of data rows."""
    path = Path(path)
    n = dataset.n_features
    rows = 0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(n)] + ["label", "domain", "role"])
        for name, dom in dataset.domains.items():
            for x, label in zip(dom.features, dom.labels):
                w.writerow([repr(float(v)) for v in x] + [int(label), name, dom.role])
                rows += 1
    return rows


def read_csv(path) -> DomainDataset:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        xcols = [c for c in reader.fieldnames if c.startswith("x")]
        grouped: dict[str, list] = {}
        roles: dict[str, str] = {}
        for row in reader:
            grouped.setdefault(row["domain"], []).append(
                ([float(row[c]) for c in xcols], int(row["label"])))
            roles[row["domain"]] = row["role"]
    return DomainDataset({
        k: Domain(np.array([r[0] for r in v]), np.array([r[1] for r in v], dtype=np.int64), roles[k])
        for k, v in grouped.items()
    })
