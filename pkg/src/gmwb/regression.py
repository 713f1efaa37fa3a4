"""Continuation-value regressors: polynomial OLS and a small SiLU network."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit


class RegressionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# polynomial bases

@dataclass(frozen=True)
class BasisSpec:
    """Monomials over named covariates; ``exponents[t, v]`` is the power of variable v in term t."""

    variables: tuple
    exponents: tuple  # tuple of tuples, hashable
    name: str = "custom"

    @property
    def size(self) -> int:
        return len(self.exponents)

    @property
    def dim(self) -> int:
        return len(self.variables)

    def exponent_array(self) -> np.ndarray:
        return np.asarray(self.exponents, dtype=np.int64).reshape(self.size, self.dim)

    def design(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise RegressionError(f"basis {self.name!r} expects {self.dim} covariates, got {x.shape[1]}")
        exps = self.exponent_array()
        max_pow = int(exps.max(initial=0))
        powers = [np.ones_like(x)]
        for _ in range(max_pow):
            powers.append(powers[-1] * x)
        out = np.ones((x.shape[0], self.size))
        for t, e in enumerate(exps):
            for v, k in enumerate(e):
                if k:
                    out[:, t] *= powers[k][:, v]
        return out

    def to_dict(self) -> dict:
        return {"name": self.name, "variables": list(self.variables),
                "exponents": [list(e) for e in self.exponents]}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        return cls(tuple(d["variables"]), tuple(tuple(int(k) for k in e) for e in d["exponents"]),
                   d.get("name", "custom"))


def _monomials(dim: int, max_degree: int, exact: bool = False):
    out = []
    for deg in range(max_degree + 1):
        if exact and deg != max_degree:
            continue
        for e in itertools.product(range(deg + 1), repeat=dim):
            if sum(e) == deg:
                out.append(e)
    return sorted(out, key=lambda e: (sum(e), tuple(-k for k in e)))


def total_degree_basis(variables, degree: int, name: str | None = None, drop=()) -> BasisSpec:
    exps = [e for e in _monomials(len(variables), degree) if e not in set(drop)]
    return BasisSpec(tuple(variables), tuple(exps), name or f"deg{degree}_{''.join(variables)}")


# the three pruned cubic terms W^2 pi, A^2 pi, pi^3
_PRUNED = ((2, 0, 1), (0, 2, 1), (0, 0, 3))


def cubic_pruned() -> BasisSpec:
    """Constant-rate basis: cubic in (w, a, pi) without W^2 pi, A^2 pi, pi^3 (17 terms)."""
    return total_degree_basis(("w", "a", "pi"), 3, "cubic_pruned", drop=_PRUNED)


def quadratic_with_rate() -> BasisSpec:
    """Stochastic-rate basis: complete quadratic in (w, a, pi, r) (15 terms)."""
    return total_degree_basis(("w", "a", "pi", "r"), 2, "quadratic_rate")


def extended_rate_b() -> BasisSpec:
    """Pruned cubic in (w, a, pi) plus r, r^2, rW, rA, r pi."""
    base = [e + (0,) for e in cubic_pruned().exponents]
    extra = [e for e in _monomials(4, 2) if 1 <= e[3] <= 2 and sum(e) >= 1]
    return BasisSpec(("w", "a", "pi", "r"), tuple(base + extra), "extended_rate_b")


def extended_rate_c() -> BasisSpec:
    """``extended_rate_b`` plus every cubic term containing r."""
    b = extended_rate_b()
    extra = [e for e in _monomials(4, 3, exact=True) if e[3] >= 1]
    return BasisSpec(b.variables, b.exponents + tuple(extra), "extended_rate_c")


BASES = {
    "cubic_pruned": cubic_pruned,
    "cubic_full": lambda: total_degree_basis(("w", "a", "pi"), 3, "cubic_full"),
    "quadratic_rate": quadratic_with_rate,
    "extended_rate_b": extended_rate_b,
    "extended_rate_c": extended_rate_c,
    # regress-later bases over end-of-step covariates
    "later_cubic": lambda: total_degree_basis(("w", "a"), 3, "later_cubic"),
    "later_cubic_rate": lambda: total_degree_basis(("w", "a", "r"), 3, "later_cubic_rate"),
}


def get_basis(name: str) -> BasisSpec:
    try:
        return BASES[name]()
    except KeyError:
        raise RegressionError(f"unknown basis {name!r}; known: {sorted(BASES)}") from None


# ---------------------------------------------------------------------------
# ordinary least squares

@dataclass
class OLSModel:
    basis: BasisSpec
    coef: np.ndarray
    ridge: float | None = None

    @property
    def dim(self) -> int:
        return self.basis.dim

    def to_dict(self) -> dict:
        return {"kind": "ols", "basis": self.basis.to_dict(), "coef": self.coef.tolist(),
                "ridge": self.ridge}

    @classmethod
    def from_dict(cls, d: dict) -> "OLSModel":
        return cls(BasisSpec.from_dict(d["basis"]), np.asarray(d["coef"], dtype=float), d.get("ridge"))


def ols_solve(design, targets, rank_tol: float = 1e-9):
    """Least-squares coefficients via QR; returns ``(coef, ridge_or_None)``.

    On a numerically rank-deficient design the normal equations are solved with
    a ridge of ``1e-8`` times the mean diagonal of ``X'X``.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise RegressionError("empty design matrix")
    if x.shape[0] != y.shape[0]:
        raise RegressionError("design and targets disagree on the number of rows")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise RegressionError("non-finite entries in regression inputs")
    if x.shape[0] < x.shape[1]:
        raise RegressionError("fewer observations than basis functions")
    q, r = np.linalg.qr(x)
    d = np.abs(np.diag(r))
    if d.min() > rank_tol * d.max():
        return solve_triangular(r, q.T @ y, lower=False), None
    xtx = x.T @ x
    lam = 1e-8 * float(np.mean(np.diag(xtx)))
    coef = np.linalg.solve(xtx + lam * np.eye(x.shape[1]), x.T @ y)
    return coef, lam


def ols_fit(design, targets, basis: BasisSpec | None = None) -> OLSModel:
    coef, ridge = ols_solve(design, targets)
    if basis is None:
        k = np.asarray(design).shape[1]
        basis = BasisSpec(tuple(f"x{i}" for i in range(k)),
                          tuple(tuple(int(i == j) for j in range(k)) for i in range(k)), "identity")
    return OLSModel(basis, coef, ridge)


# ---------------------------------------------------------------------------
# feed-forward network

def silu(x):
    return x * expit(x)


def silu_grad(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


@dataclass
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    hidden: int = 128
    depth: int = 3
    cosine: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")


@dataclass
class MLPModel:
    weights: list  # [(W, b)] with W of shape (fan_in, fan_out)
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    loss_history: list = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return self.weights[0][0].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in self.weights)

    def to_dict(self) -> dict:
        return {"kind": "mlp",
                "layers": [{"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
                           for w, b in self.weights],
                "x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
                "y_mean": self.y_mean, "y_std": self.y_std}

    @classmethod
    def from_dict(cls, d: dict) -> "MLPModel":
        layers = [(np.asarray(l["weight"], dtype=float).reshape(l["shape"]),
                   np.asarray(l["bias"], dtype=float)) for l in d["layers"]]
        return cls(layers, np.asarray(d["x_mean"]), np.asarray(d["x_std"]),
                   float(d["y_mean"]), float(d["y_std"]))


def init_mlp(dim: int, hidden: int = 128, depth: int = 3, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    sizes = [dim] + [hidden] * depth + [1]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        layers.append((rng.uniform(-bound, bound, (fan_in, fan_out)),
                       rng.uniform(-bound, bound, fan_out)))
    return layers


def mlp_forward(layers, z):
    """Forward pass on standardised inputs; returns output and cached pre-activations."""
    cache = [z]
    h = z
    for i, (w, b) in enumerate(layers):
        u = h @ w + b
        if i < len(layers) - 1:
            cache.append(u)
            h = silu(u)
        else:
            h = u
    return h[:, 0], cache


def mlp_loss_grad(layers, z, t):
    """Mean squared error and its gradient w.r.t. every (W, b)."""
    out, cache = mlp_forward(layers, z)
    n = z.shape[0]
    resid = out - t
    loss = float(resid @ resid / n)
    delta = (2.0 / n) * resid[:, None]
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        h_in = cache[0] if i == 0 else silu(cache[i])
        grads[i] = (h_in.T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w.T) * silu_grad(cache[i])
    return loss, grads


def mlp_fit(inputs, targets, cfg: TrainConfig | None = None) -> MLPModel:
    """Train with Adam, decoupled weight decay and a per-epoch cosine learning-rate schedule."""
    cfg = cfg or TrainConfig()
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise RegressionError("non-finite entries in regression inputs")
    x_mean, x_std = x.mean(axis=0), x.std(axis=0)
    x_std = np.where(x_std > 1e-12, x_std, 1.0)
    y_mean, y_std = float(y.mean()), float(y.std())
    y_std = y_std if y_std > 1e-12 else 1.0
    z = (x - x_mean) / x_std
    t = (y - y_mean) / y_std

    layers = init_mlp(x.shape[1], cfg.hidden, cfg.depth, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    m1 = [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]
    m2 = [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]
    b1, b2, eps = 0.9, 0.999, 1e-8
    n = z.shape[0]
    bs = n if cfg.batch_size is None else min(cfg.batch_size, n)
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate
        if cfg.cosine:
            lr *= 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
        order = np.arange(n) if bs == n else rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, bs):
            idx = order[lo:lo + bs]
            loss, grads = mlp_loss_grad(layers, z[idx], t[idx])
            if not math.isfinite(loss):
                raise RegressionError(f"non-finite training loss at epoch {epoch}")
            epoch_loss += loss * idx.size
            step += 1
            c1, c2 = 1.0 - b1 ** step, 1.0 - b2 ** step
            new_layers = []
            for i, ((w, b), (gw, gb)) in enumerate(zip(layers, grads)):
                mw, mb = m1[i]
                vw, vb = m2[i]
                mw = b1 * mw + (1 - b1) * gw
                mb = b1 * mb + (1 - b1) * gb
                vw = b2 * vw + (1 - b2) * gw * gw
                vb = b2 * vb + (1 - b2) * gb * gb
                m1[i], m2[i] = (mw, mb), (vw, vb)
                w = w * (1.0 - lr * cfg.weight_decay) - lr * (mw / c1) / (np.sqrt(vw / c2) + eps)
                b = b * (1.0 - lr * cfg.weight_decay) - lr * (mb / c1) / (np.sqrt(vb / c2) + eps)
                new_layers.append((w, b))
            layers = new_layers
        history.append(epoch_loss / n)
    return MLPModel(layers, x_mean, x_std, y_mean, y_std, history)


def mlp_predict(model: MLPModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.dim:
        raise RegressionError(f"network expects {model.dim} inputs, got {x.shape[1]}")
    out, _ = mlp_forward(model.weights, (x - model.x_mean) / model.x_std)
    return model.y_mean + model.y_std * out


def predict(model, covariates) -> np.ndarray:
    if isinstance(model, OLSModel):
        return model.basis.design(covariates) @ model.coef
    if isinstance(model, MLPModel):
        return mlp_predict(model, covariates)
    raise RegressionError(f"unsupported model type {type(model).__name__}")


def model_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "ols":
        return OLSModel.from_dict(d)
    if kind == "mlp":
        return MLPModel.from_dict(d)
    raise RegressionError(f"unknown model kind {kind!r}")
