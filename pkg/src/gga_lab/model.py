"""Small differentiable classifiers over a flat parameter vector.

Two families are supported:

* ``poly-logistic``: logistic / softmax regression on raw monomial features
  of the input (all monomials of total degree <= ``degree``, constant
  included). Binary problems use a single logit.
* ``mlp``: dense network, ``layer_widths`` lists every layer width including
  input and output, softmax over the last layer.

Every function here is pure: parameters are passed in as a 1-D float array
and nothing is cached between calls.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

FAMILIES = ("poly-logistic", "mlp")
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelSpec:
    family: str = "poly-logistic"
    input_dim: int = 2
    num_classes: int = 2
    degree: int = 4
    layer_widths: tuple[int, ...] = field(default_factory=tuple)
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))

    def validate(self) -> "ModelSpec":
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.family == "poly-logistic":
            if self.degree < 1:
                raise ConfigError(f"degree must be >= 1, got {self.degree}")
        else:
            widths = self.layer_widths
            if len(widths) < 2 or any(w < 1 for w in widths):
                raise ConfigError(f"mlp needs at least input and output widths, got {list(widths)}")
            if widths[0] != self.input_dim:
                raise ConfigError(f"layer_widths[0]={widths[0]} does not match input_dim={self.input_dim}")
            if widths[-1] != self.num_classes:
                raise ConfigError(
                    f"layer_widths[-1]={widths[-1]} does not match num_classes={self.num_classes}"
                )
            if self.activation not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {self.activation!r}")
        return self

    @property
    def binary(self) -> bool:
        return self.num_classes == 2


# --------------------------------------------------------------------------
# polynomial features


@lru_cache(maxsize=None)
def monomial_exponents(input_dim: int, degree: int) -> np.ndarray:
    """Exponent table of shape (n_features, input_dim), ordered by total degree."""
    rows = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(input_dim), total):
            exps = [0] * input_dim
            for k in combo:
                exps[k] += 1
            rows.append(exps)
    # combinations_with_replacement yields x1^2 before x1*x2, i.e. higher x1 power first
    table = np.array(rows, dtype=np.int64).reshape(len(rows), input_dim)
    table.setflags(write=False)
    return table


def poly_features(X: np.ndarray, degree: int) -> np.ndarray:
    exps = monomial_exponents(X.shape[1], degree)
    return np.prod(X[:, None, :] ** exps[None, :, :], axis=2)


def _poly_features_grad(X: np.ndarray, degree: int) -> np.ndarray:
    """d phi_k / d x_j, shape (N, n_features, input_dim)."""
    exps = monomial_exponents(X.shape[1], degree)
    N, d = X.shape
    out = np.zeros((N, exps.shape[0], d))
    for j in range(d):
        lowered = exps.copy()
        coef = lowered[:, j].astype(float)
        lowered[:, j] = np.maximum(lowered[:, j] - 1, 0)
        out[:, :, j] = coef[None, :] * np.prod(X[:, None, :] ** lowered[None, :, :], axis=2)
    return out


def num_features(spec: ModelSpec) -> int:
    return monomial_exponents(spec.input_dim, spec.degree).shape[0]


def num_params(spec: ModelSpec) -> int:
    spec.validate()
    if spec.family == "poly-logistic":
        F = num_features(spec)
        return F if spec.binary else F * spec.num_classes
    w = spec.layer_widths
    return sum(w[i] * w[i + 1] + w[i + 1] for i in range(len(w) - 1))


# --------------------------------------------------------------------------
# parameter layout helpers


def _mlp_unpack(spec: ModelSpec, theta: np.ndarray):
    layers = []
    pos = 0
    w = spec.layer_widths
    for i in range(len(w) - 1):
        n_w = w[i] * w[i + 1]
        W = theta[pos:pos + n_w].reshape(w[i], w[i + 1])
        pos += n_w
        b = theta[pos:pos + w[i + 1]]
        pos += w[i + 1]
        layers.append((W, b))
    return layers


def build_model(spec: ModelSpec, rng_seed: int) -> np.ndarray:
    """Initial parameter vector. Poly-logistic starts at zero; MLP weights are
    Glorot-uniform from ``rng_seed`` with zero biases."""
    spec.validate()
    if spec.family == "poly-logistic":
        return np.zeros(num_params(spec))
    rng = np.random.default_rng(rng_seed)
    parts = []
    w = spec.layer_widths
    for i in range(len(w) - 1):
        limit = np.sqrt(6.0 / (w[i] + w[i + 1]))
        parts.append(rng.uniform(-limit, limit, size=w[i] * w[i + 1]))
        parts.append(np.zeros(w[i + 1]))
    return np.concatenate(parts)


def _check_inputs(spec: ModelSpec, theta: np.ndarray, X: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ShapeError(f"expected batch of shape (N, {spec.input_dim}), got {X.shape}")
    if theta.ndim != 1 or theta.shape[0] != num_params(spec):
        raise ShapeError(f"expected {num_params(spec)} parameters, got shape {theta.shape}")


def _check_labels(spec: ModelSpec, X: np.ndarray, y: np.ndarray) -> None:
    if X.shape[0] == 0:
        raise DomainError("empty batch")
    if y.shape != (X.shape[0],):
        raise ShapeError(f"labels shape {y.shape} does not match batch of {X.shape[0]}")
    if np.any(y < 0) or np.any(y >= spec.num_classes):
        raise DomainError(f"labels must lie in [0, {spec.num_classes})")


# --------------------------------------------------------------------------
# forward / loss / gradient


def logits(spec: ModelSpec, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Raw model outputs: shape (N,) for binary poly-logistic, (N, K) otherwise."""
    X = np.asarray(X, dtype=float)
    theta = np.asarray(theta, dtype=float)
    _check_inputs(spec, theta, X)
    if spec.family == "poly-logistic":
        phi = poly_features(X, spec.degree)
        if spec.binary:
            return phi @ theta
        return phi @ theta.reshape(phi.shape[1], spec.num_classes)
    h = X
    layers = _mlp_unpack(spec, theta)
    act = np.tanh if spec.activation == "tanh" else (lambda z: np.maximum(z, 0.0))
    for W, b in layers[:-1]:
        h = act(h @ W + b)
    W, b = layers[-1]
    return h @ W + b


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(spec: ModelSpec, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Class-probability matrix of shape (N, num_classes)."""
    z = logits(spec, theta, X)
    if z.ndim == 1:
        p1 = _sigmoid(z)
        return np.stack([1.0 - p1, p1], axis=1)
    return _softmax(z)


def prepare(spec: ModelSpec, X) -> np.ndarray:
    """Model-ready inputs: monomial features for poly-logistic, raw features for mlp."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ShapeError(f"expected batch of shape (N, {spec.input_dim}), got {X.shape}")
    if spec.family == "poly-logistic":
        return poly_features(X, spec.degree)
    return X


def batch_value_and_grad(spec: ModelSpec, thetas: np.ndarray, prepared: np.ndarray, y: np.ndarray,
                         lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Loss and gradient for each row of ``thetas`` (shape (m, P)) on one prepared batch.

    Every reduction runs over a contiguous last axis, so row ``i`` of the
    result is bit-identical to evaluating ``thetas[i]`` alone.
    """
    N = prepared.shape[0]
    reg = 0.5 * lam * (thetas * thetas).sum(-1)
    if spec.family == "poly-logistic":
        phi = prepared
        if spec.binary:
            z = (thetas[:, None, :] * phi[None, :, :]).sum(-1)  # (m, N)
            ce = (np.logaddexp(0.0, z) - y[None, :] * z).sum(-1) / N
            r = _sigmoid(z) - y[None, :]
            g = (r[:, None, :] * phi.T[None, :, :]).sum(-1) / N
            return ce + reg, g + lam * thetas
        F, K = phi.shape[1], spec.num_classes
        W = thetas.reshape(-1, F, K).transpose(0, 2, 1)  # (m, K, F)
        z = (W[:, None, :, :] * phi[None, :, None, :]).sum(-1)  # (m, N, K)
        zs = z - z.max(axis=-1, keepdims=True)
        logZ = np.log(np.exp(zs).sum(-1))
        picked = np.take_along_axis(zs, y[None, :, None], axis=-1)[..., 0]
        ce = (logZ - picked).sum(-1) / N
        dz = np.exp(zs - logZ[..., None])
        dz[:, np.arange(N), y] -= 1.0
        # (m, F, K) accumulated over samples
        g = (dz.transpose(0, 2, 1)[:, None, :, :] * phi.T[None, :, None, :]).sum(-1) / N
        return ce + reg, g.reshape(thetas.shape[0], -1) + lam * thetas

    out_l = np.empty(thetas.shape[0])
    out_g = np.empty_like(thetas)
    for i, th in enumerate(thetas):
        out_l[i], out_g[i] = _mlp_value_and_grad(spec, th, prepared, y)
    return out_l + reg, out_g + lam * thetas


def value_and_grad(spec: ModelSpec, theta, X, y, lam: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy plus ``lam * 0.5 * ||theta||^2`` and its exact gradient."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    theta = np.asarray(theta, dtype=float)
    _check_inputs(spec, theta, X)
    _check_labels(spec, X, y)
    losses, grads = batch_value_and_grad(spec, theta[None, :], prepare(spec, X), y, lam)
    return float(losses[0]), grads[0]


def _mlp_value_and_grad(spec: ModelSpec, theta: np.ndarray, X: np.ndarray, y: np.ndarray):
    """Unregularized mean cross-entropy of the MLP and its gradient by backpropagation."""
    layers = _mlp_unpack(spec, theta)
    tanh = spec.activation == "tanh"
    hs = [X]
    pre = []
    h = X
    for W, b in layers[:-1]:
        a = h @ W + b
        pre.append(a)
        h = np.tanh(a) if tanh else np.maximum(a, 0.0)
        hs.append(h)
    W, b = layers[-1]
    z = h @ W + b
    ce, dz = _softmax_ce(z, y)

    grads = []
    delta = dz
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        grads.append((delta.sum(axis=0), hs[li].T @ delta))
        if li > 0:
            delta = delta @ W.T
            a = pre[li - 1]
            delta = delta * (1.0 - np.tanh(a) ** 2 if tanh else (a > 0).astype(float))
    flat = []
    for gb, gW in reversed(grads):
        flat.append(gW.ravel())
        flat.append(gb)
    return ce, np.concatenate(flat)


def _softmax_ce(z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of logits ``z`` and d(mean CE)/dz."""
    N = z.shape[0]
    zs = z - z.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(zs).sum(axis=1))
    ce = float(np.mean(logZ - zs[np.arange(N), y]))
    dz = np.exp(zs - logZ[:, None])
    dz[np.arange(N), y] -= 1.0
    return ce, dz / N


def loss(spec: ModelSpec, theta, X, y, lam: float = 0.0) -> float:
    return value_and_grad(spec, theta, X, y, lam)[0]


def gradient(spec: ModelSpec, theta, X, y, lam: float = 0.0) -> np.ndarray:
    return value_and_grad(spec, theta, X, y, lam)[1]


def fd_gradient(spec: ModelSpec, theta, X, y, lam: float = 0.0, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of :func:`loss`, one coordinate at a time."""
    if not h > 0:
        raise DomainError(f"finite-difference step must be positive, got {h}")
    return central_difference(lambda t: loss(spec, t, X, y, lam), theta, h)


def central_difference(fn, theta, h: float = 1e-5) -> np.ndarray:
    if not h > 0:
        raise DomainError(f"finite-difference step must be positive, got {h}")
    theta = np.array(theta, dtype=float)
    out = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        f_plus = fn(theta)
        theta[i] = orig - h
        f_minus = fn(theta)
        theta[i] = orig
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return out


def predict(spec: ModelSpec, theta, X) -> np.ndarray:
    # argmax picks the lowest index on ties
    z = logits(spec, theta, X)
    if z.ndim == 1:
        return (z > 0).astype(np.int64)
    return np.argmax(z, axis=1)


def input_gradient(spec: ModelSpec, theta, X) -> np.ndarray:
    """Sensitivity of the decision logit to each input coordinate, shape (N, input_dim).

    Binary models use the log-odds of class 1. Multiclass models sum the
    absolute sensitivities of all class logits.
    """
    X = np.asarray(X, dtype=float)
    theta = np.asarray(theta, dtype=float)
    _check_inputs(spec, theta, X)
    if spec.family == "poly-logistic":
        dphi = _poly_features_grad(X, spec.degree)  # (N, F, d)
        if spec.binary:
            return np.einsum("nfd,f->nd", dphi, theta)
        Wm = theta.reshape(dphi.shape[1], spec.num_classes)
        return np.abs(np.einsum("nfd,fk->nkd", dphi, Wm)).sum(axis=1)

    layers = _mlp_unpack(spec, theta)
    tanh = spec.activation == "tanh"
    # forward-mode Jacobian dh/dx, shape (N, width, d)
    h = X
    J = np.broadcast_to(np.eye(spec.input_dim), (X.shape[0], spec.input_dim, spec.input_dim)).copy()
    for W, b in layers[:-1]:
        a = h @ W + b
        deriv = 1.0 - np.tanh(a) ** 2 if tanh else (a > 0).astype(float)
        J = deriv[:, :, None] * np.einsum("nid,ik->nkd", J, W)
        h = np.tanh(a) if tanh else np.maximum(a, 0.0)
    W, _ = layers[-1]
    Jz = np.einsum("nid,ik->nkd", J, W)  # (N, K, d)
    if spec.binary:
        return Jz[:, 1, :] - Jz[:, 0, :]
    return np.abs(Jz).sum(axis=1)
