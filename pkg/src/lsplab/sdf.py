"""Skip-connected softplus MLP signed-distance model.

The full set of weights and biases of one fitted network is the shape
representation everything else in the package operates on. The network maps
a 3D point to one signed distance; layer ``skip_at`` outputs ``hidden - 3``
values so that its activation concatenated with the raw input restores width
``hidden`` for the next layer.

The forward pass exists twice on purpose: a plain numpy version for cheap
evaluation (grids, meshes, pose sweeps) and a tape version used in training.
The tape version also assembles the spatial gradient of the field in closed
form, layer by layer (the softplus derivative is the logistic sigmoid), as
ordinary graph ops; losses built on that gradient therefore backpropagate
into the parameters through it with no extra machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .autodiff import Adam, AutodiffError, ExponentialDecay, Tensor, backward, concat
from .geometry import SurfaceSamples, make_rng
from .validate import as_points, as_unit_normals

# Additive guard under every gradient-norm square root; far below f64
# resolution of any value the tests compare, but keeps backward finite if a
# gradient vanishes exactly.
_NORM_EPS = 1e-24


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the iteration where it happened."""

    def __init__(self, iteration: int):
        super().__init__(f"training diverged (non-finite loss) at iteration {iteration}")
        self.iteration = iteration


# ---------------------------------------------------------------------------
# configuration and parameters


@dataclass(frozen=True)
class SdfConfig:
    """Architecture of the signed-distance MLP."""

    depth: int = 8
    hidden: int = 256
    skip_at: int = 4
    beta: float = 100.0
    sphere_radius: float = 0.5

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.hidden < 8:
            raise ValueError("hidden must be at least 8")
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    @property
    def has_skip(self) -> bool:
        return 0 < self.skip_at < self.depth

    @property
    def skip_consumer(self) -> int:
        """1-based index of the layer that sees [hidden-part, raw input]."""
        return self.skip_at + 1 if self.has_skip else -1

    def layer_dims(self) -> list:
        """(out_dim, in_dim) per layer, 1-based order."""
        dims = []
        for layer in range(1, self.depth + 1):
            in_dim = 3 if layer == 1 else self.hidden
            out_dim = 1 if layer == self.depth else self.hidden
            if self.has_skip and layer == self.skip_at:
                out_dim = self.hidden - 3
            dims.append((out_dim, in_dim))
        return dims


@dataclass
class LevelSetParams:
    """All weights and biases of one signed-distance network."""

    weights: list
    biases: list
    config: SdfConfig = field(default_factory=SdfConfig)

    def validate(self) -> "LevelSetParams":
        dims = self.config.layer_dims()
        if len(self.weights) != len(dims) or len(self.biases) != len(dims):
            raise ValueError(f"expected {len(dims)} layers, got "
                             f"{len(self.weights)} weights / {len(self.biases)} biases")
        for i, (out_dim, in_dim) in enumerate(dims):
            if self.weights[i].shape != (out_dim, in_dim):
                raise ValueError(f"layer {i + 1} weight shape {self.weights[i].shape}"
                                 f" != {(out_dim, in_dim)}")
            if self.biases[i].shape != (out_dim,):
                raise ValueError(f"layer {i + 1} bias shape {self.biases[i].shape}"
                                 f" != {(out_dim,)}")
        return self

    def copy(self) -> "LevelSetParams":
        return LevelSetParams([w.copy() for w in self.weights],
                              [b.copy() for b in self.biases], self.config)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def subtract(self, other: "LevelSetParams") -> "LevelSetParams":
        """Per-entry difference of two parameter sets with the same layout."""
        if self.config != other.config:
            raise ValueError("parameter layouts differ")
        return LevelSetParams(
            [a - b for a, b in zip(self.weights, other.weights)],
            [a - b for a, b in zip(self.biases, other.biases)], self.config)

    @classmethod
    def from_flat(cls, vec: np.ndarray, config: SdfConfig) -> "LevelSetParams":
        weights, biases, k = [], [], 0
        for out_dim, in_dim in config.layer_dims():
            weights.append(vec[k:k + out_dim * in_dim].reshape(out_dim, in_dim).copy())
            k += out_dim * in_dim
            biases.append(vec[k:k + out_dim].copy())
            k += out_dim
        if k != vec.size:
            raise ValueError(f"flat vector has {vec.size} entries, expected {k}")
        return cls(weights, biases, config)


def init_geometric(config: SdfConfig, seed: int = 0) -> LevelSetParams:
    """Sphere-like initialization.

    Hidden weights are N(0, 2/fan_out), biases zero; the final layer gets
    constant weights sqrt(pi)/sqrt(fan_in) and bias -sphere_radius, so the
    initial field approximates the signed distance of an origin-centered
    sphere of that radius.
    """
    rng = make_rng(seed, "geo-init")
    weights, biases = [], []
    dims = config.layer_dims()
    for layer, (out_dim, in_dim) in enumerate(dims, start=1):
        if layer == config.depth and config.depth > 1:
            weights.append(np.full((out_dim, in_dim), np.sqrt(np.pi) / np.sqrt(in_dim)))
            biases.append(np.full(out_dim, -config.sphere_radius))
        elif layer == config.depth:  # single linear layer
            weights.append(np.full((out_dim, in_dim), np.sqrt(np.pi) / np.sqrt(in_dim)))
            biases.append(np.full(out_dim, -config.sphere_radius))
        else:
            weights.append(rng.normal(0.0, np.sqrt(2.0 / out_dim), size=(out_dim, in_dim)))
            biases.append(np.zeros(out_dim))
    return LevelSetParams(weights, biases, config).validate()


# ---------------------------------------------------------------------------
# numpy forward


def evaluate(params: LevelSetParams, points: np.ndarray,
             with_gradient: bool = False):
    """Field values (and optionally spatial gradients) at row-stacked points."""
    X = as_points(points)
    cfg = params.config
    a = X
    jac = None  # (n, d, 3) after the first hidden layer
    for layer in range(1, cfg.depth + 1):
        W = params.weights[layer - 1]
        b = params.biases[layer - 1]
        last = layer == cfg.depth
        if cfg.has_skip and layer == cfg.skip_consumer:
            h = cfg.hidden - 3
            u = a @ W[:, :h].T + X @ W[:, h:].T + b
            if with_gradient:
                ju = np.einsum("npk,dp->ndk", jac, W[:, :h]) + W[None, :, h:]
        elif layer == 1:
            u = X @ W.T + b
            if with_gradient:
                ju = np.broadcast_to(W[None, :, :], (len(X), W.shape[0], 3)).copy()
        else:
            u = a @ W.T + b
            if with_gradient:
                ju = np.einsum("npk,dp->ndk", jac, W)
        if last:
            f = u[:, 0]
            grad = ju[:, 0, :] if with_gradient else None
            return (f, grad) if with_gradient else f
        s = expit(cfg.beta * u)
        a = np.logaddexp(0.0, cfg.beta * u) / cfg.beta
        if with_gradient:
            jac = s[:, :, None] * ju
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# tape forward


def params_to_tensors(params: LevelSetParams, prefix: str = "") -> dict:
    """Named gradient-carrying leaves for every weight and bias."""
    out = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases), start=1):
        out[f"{prefix}W{i}"] = Tensor(w.copy(), requires_grad=True, name=f"{prefix}W{i}")
        out[f"{prefix}b{i}"] = Tensor(b.copy(), requires_grad=True, name=f"{prefix}b{i}")
    return out


def tensors_to_params(tensors: dict, config: SdfConfig, prefix: str = "") -> LevelSetParams:
    weights = [tensors[f"{prefix}W{i}"].data.copy() for i in range(1, config.depth + 1)]
    biases = [tensors[f"{prefix}b{i}"].data.copy() for i in range(1, config.depth + 1)]
    return LevelSetParams(weights, biases, config).validate()


def forward_t(layers: dict, config: SdfConfig, points, prefix: str = "",
              with_spatial_grad: bool = True):
    """Tape forward pass; returns (values (n,1), gradient columns [3 x (n,1)]).

    ``layers`` maps names like "W1"/"b1" (with optional prefix) to tensors.
    The gradient columns are graph nodes assembled from the layer Jacobians,
    so losses built on them differentiate back into every parameter. When
    ``with_spatial_grad`` is off the Jacobian graph is skipped (the second
    element is None), which roughly quarters the forward work.
    """
    X = points if isinstance(points, Tensor) else Tensor(np.asarray(points, dtype=np.float64))
    n = X.shape[0]
    a = X
    jac = None  # list of three (n, d) tensors: activation-Jacobian columns
    for layer in range(1, config.depth + 1):
        W = layers[f"{prefix}W{layer}"]
        b = layers[f"{prefix}b{layer}"]
        last = layer == config.depth
        ju = None
        if config.has_skip and layer == config.skip_consumer:
            h = config.hidden - 3
            Wh = W[:, :h]
            Wx = W[:, h:]
            u = a @ Wh.T + X @ Wx.T + b
            if with_spatial_grad:
                ju = [jac[k] @ Wh.T + Wx[:, k] for k in range(3)]
        elif layer == 1:
            u = X @ W.T + b
            if last:  # degenerate single-linear-layer network
                if not with_spatial_grad:
                    return u, None
                ones = Tensor(np.ones((n, 1)))
                return u, [ones * W[:, k] for k in range(3)]
        else:
            u = a @ W.T + b
            if with_spatial_grad:
                ju = [jac[k] @ W.T for k in range(3)]
        if last:
            return u, ju
        s = (Tensor(config.beta) * u).sigmoid() if with_spatial_grad else None
        a = u.softplus(config.beta)
        if with_spatial_grad:
            if layer == 1:
                jac = [s * W[:, k] for k in range(3)]
            else:
                jac = [s * ju[k] for k in range(3)]
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# loss


@dataclass(frozen=True)
class LossConfig:
    """Weights of the four field-fitting terms; means over each point set."""

    lambda_dist_on: float = 3000.0
    lambda_dist_off: float = 100.0
    lambda_eik: float = 50.0
    lambda_norm: float = 100.0
    rho: float = 100.0
    use_dist_off: bool = False


def _grad_norm(ju) -> Tensor:
    return (ju[0] ** 2 + ju[1] ** 2 + ju[2] ** 2 + Tensor(_NORM_EPS)).sqrt()


def build_loss(layers: dict, config: SdfConfig, samples: SurfaceSamples,
               loss_cfg: LossConfig = LossConfig(), prefix: str = ""):
    """Assemble the field-fitting loss graph.

    Returns (total loss tensor, term-value dict, skipped-normal count).
    Terms are the unweighted per-term means; the total applies the lambdas.
    """
    terms = {}
    f_on, g_on = forward_t(layers, config, samples.points, prefix=prefix)
    dist_on = f_on.abs().mean()
    terms["dist_on"] = dist_on

    have_off = len(samples.off_points) > 0
    if have_off:
        f_off, g_off = forward_t(layers, config, samples.off_points, prefix=prefix)

    norm_on = _grad_norm(g_on)
    if have_off:
        norm_all = concat([norm_on, _grad_norm(g_off)], axis=0)
    else:
        norm_all = norm_on
    eik = ((norm_all - Tensor(1.0)) ** 2).mean()
    terms["eikonal"] = eik

    # Surface-normal agreement; points with a vanishing field gradient are
    # excluded from the mean and counted.
    nrm = samples.normals
    raw_sq = sum(c.data ** 2 for c in g_on)  # un-guarded, for the skip rule
    mask_rows = raw_sq[:, 0] >= 1e-24
    skipped = int((~mask_rows).sum())
    mask = Tensor(mask_rows.astype(np.float64).reshape(-1, 1))
    denom = norm_on * mask + (Tensor(1.0) - mask)
    unit = [g_on[k] / denom for k in range(3)]
    dot = unit[0] * nrm[:, 0:1] + unit[1] * nrm[:, 1:2] + unit[2] * nrm[:, 2:3]
    per_point = (Tensor(1.0) - dot).abs()
    for k in range(3):
        per_point = per_point + (unit[k] - nrm[:, k:k + 1]).abs()
    kept = max(int(mask_rows.sum()), 1)
    normal_term = (per_point * mask).sum() * (1.0 / kept)
    terms["normals"] = normal_term

    total = (Tensor(loss_cfg.lambda_dist_on) * dist_on
             + Tensor(loss_cfg.lambda_eik) * eik
             + Tensor(loss_cfg.lambda_norm) * normal_term)
    if loss_cfg.use_dist_off and have_off:
        dist_off = ((Tensor(-loss_cfg.rho) * f_off.abs()).exp()).mean()
        terms["dist_off"] = dist_off
        total = total + Tensor(loss_cfg.lambda_dist_off) * dist_off
    else:
        terms["dist_off"] = Tensor(0.0)
    return total, terms, skipped


@dataclass
class SdfLossResult:
    value: float
    terms: dict
    gradients: dict
    skipped_normals: int


def sdf_loss(params: LevelSetParams, samples: SurfaceSamples,
             loss_cfg: LossConfig = LossConfig(),
             with_gradients: bool = True) -> SdfLossResult:
    """Loss of Eq-style field fitting at ``params``; optionally its gradients."""
    layers = params_to_tensors(params)
    total, terms, skipped = build_loss(layers, params.config, samples, loss_cfg)
    grads = {}
    if with_gradients:
        backward(total)
        for name, tensor in layers.items():
            grads[name] = (np.zeros_like(tensor.data) if tensor.grad is None
                           else tensor.grad.copy())
    return SdfLossResult(float(total.data), {k: float(v.data) for k, v in terms.items()},
                         grads, skipped)


# ---------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class FitConfig:
    """Optimization settings for direct per-shape fitting."""

    iterations: int = 2000
    lr: float = 1e-3
    lr_gamma: float = 0.998
    lr_every: int = 30
    batch_on: int = 512
    batch_off: int = 512
    snapshot_every: int = 50
    seed: int = 0


@dataclass
class FitResult:
    params: LevelSetParams
    best_loss: float
    best_iteration: int
    history: list  # (iteration, evaluated full-set loss)


def fit_shape(samples: SurfaceSamples, config: SdfConfig = SdfConfig(),
              loss_cfg: LossConfig = LossConfig(),
              fit_cfg: FitConfig = FitConfig(),
              init: LevelSetParams | None = None) -> FitResult:
    """Fit a field to surface samples with Adam; returns the best snapshot.

    Minibatches of surface points are drawn from ``samples``; off-surface
    points are redrawn uniformly from [-1, 1]^3 every iteration. Snapshots
    evaluate the loss on the full sample set and keep the best parameters.
    """
    if len(samples.points) < 1:
        raise ValueError("fit needs at least one surface sample")
    params = init.copy() if init is not None else init_geometric(config, fit_cfg.seed)
    params.validate()
    layers = params_to_tensors(params)
    opt = Adam(layers, lr=fit_cfg.lr)
    sched = ExponentialDecay(fit_cfg.lr, fit_cfg.lr_gamma, fit_cfg.lr_every)
    rng = make_rng(fit_cfg.seed, "fit")
    n_on = len(samples.points)
    probe = samples
    if len(samples.off_points) == 0:
        probe = SurfaceSamples(samples.points, samples.normals,
                               make_rng(fit_cfg.seed, "fit-probe").uniform(
                                   -1.0, 1.0, size=(min(n_on, 2048), 3)))

    best_loss = np.inf
    best_params = None
    best_iter = 0
    history = []

    def snapshot(it):
        nonlocal best_loss, best_params, best_iter
        total, _, _ = build_loss(layers, config, probe, loss_cfg)
        value = float(total.data)
        history.append((it, value))
        if value < best_loss:
            best_loss = value
            best_params = tensors_to_params(layers, config)
            best_iter = it
        return value

    for it in range(fit_cfg.iterations):
        idx = rng.integers(0, n_on, size=min(fit_cfg.batch_on, n_on))
        off = rng.uniform(-1.0, 1.0, size=(fit_cfg.batch_off, 3))
        batch = SurfaceSamples(samples.points[idx], samples.normals[idx], off)
        total, _, _ = build_loss(layers, config, batch, loss_cfg)
        if not np.isfinite(total.data):
            raise TrainingDiverged(it)
        opt.zero_grad()
        backward(total)
        opt.lr = sched.at(it)
        opt.step()
        if (it + 1) % fit_cfg.snapshot_every == 0:
            snapshot(it + 1)
    if best_params is None:
        snapshot(fit_cfg.iterations)
    return FitResult(best_params, best_loss, best_iter, history)


class SdfShapeFitter(BaseEstimator):
    """Estimator wrapper around :func:`fit_shape`.

    Parameters mirror ``SdfConfig`` / ``LossConfig`` / ``FitConfig``; after
    ``fit`` the learned representation is in ``params_``.
    """

    def __init__(self, depth: int = 8, hidden: int = 256, skip_at: int = 4,
                 beta: float = 100.0, sphere_radius: float = 0.5,
                 iterations: int = 2000, lr: float = 1e-3,
                 batch_on: int = 512, batch_off: int = 512, seed: int = 0,
                 lambda_dist_on: float = 3000.0, lambda_dist_off: float = 100.0,
                 lambda_eik: float = 50.0, lambda_norm: float = 100.0,
                 rho: float = 100.0, use_dist_off: bool = False):
        self.depth = depth
        self.hidden = hidden
        self.skip_at = skip_at
        self.beta = beta
        self.sphere_radius = sphere_radius
        self.iterations = iterations
        self.lr = lr
        self.batch_on = batch_on
        self.batch_off = batch_off
        self.seed = seed
        self.lambda_dist_on = lambda_dist_on
        self.lambda_dist_off = lambda_dist_off
        self.lambda_eik = lambda_eik
        self.lambda_norm = lambda_norm
        self.rho = rho
        self.use_dist_off = use_dist_off

    def _configs(self):
        sdf_cfg = SdfConfig(self.depth, self.hidden, self.skip_at, self.beta,
                            self.sphere_radius)
        loss_cfg = LossConfig(self.lambda_dist_on, self.lambda_dist_off,
                              self.lambda_eik, self.lambda_norm, self.rho,
                              self.use_dist_off)
        fit_cfg = FitConfig(iterations=self.iterations, lr=self.lr,
                            batch_on=self.batch_on, batch_off=self.batch_off,
                            seed=self.seed)
        return sdf_cfg, loss_cfg, fit_cfg

    def fit(self, X, y=None, normals=None):
        """Fit to surface data: a SurfaceSamples or (points, normals) pair."""
        if isinstance(X, SurfaceSamples):
            samples = X
        else:
            pts = as_points(X)
            samples = SurfaceSamples(pts, as_unit_normals(normals, len(pts)))
        sdf_cfg, loss_cfg, fit_cfg = self._configs()
        result = fit_shape(samples, sdf_cfg, loss_cfg, fit_cfg)
        self.params_ = result.params
        self.best_loss_ = result.best_loss
        self.history_ = result.history
        return self

    def predict(self, X) -> np.ndarray:
        """Signed-distance values at query points."""
        if not hasattr(self, "params_"):
            raise NotFittedError("SdfShapeFitter is not fitted yet")
        return evaluate(self.params_, as_points(X))
