"""Pose estimation by registering a partial cloud against a field.

The observed cloud is assumed to be the reference surface moved by an unknown
rigid pose. Candidate Euler angles come from a uniform grid scored by the
mean absolute field value at the cloud (translation zero); the best few are
refined by alternating angle-only and translation-only optimization, and the
winner is polished until the registration error stops changing.

Two realizations of the pose-conditioned field are available: "v2" transforms
the reference parameters analytically (the field is queried at the inversely
moved points), "v1" regenerates the first layer from the queried pose through
the hypernetwork, including the shape offset's pose-weighted contribution.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .autodiff import Adam, Tensor, backward
from .dataset import ShapeDelta, SharedPrior, realize_theta
from .geometry import PoseSE3, euler_to_rotation, euler_to_rotation_t, make_rng
from .hypernet import generate_t, pose_input_t
from .sdf import LevelSetParams, SdfConfig, evaluate, forward_t
from .validate import as_points

_EVAL_CHUNK = 65536


@dataclass(frozen=True)
class PoseSearchConfig:
    """Grid search and refinement settings."""

    grid: int = 15          # angle steps per axis
    candidates: int = 20    # poses kept after the grid scan
    rounds: int = 20        # alternation rounds per candidate
    sub_iters: int = 10     # optimizer iterations per frozen-variable step
    lr_omega: float = 0.05
    lr_trans: float = 0.01
    refine_tol: float = 1e-6
    max_refine_rounds: int = 100
    max_points: int | None = 300  # cloud subsample for the error (None: all)
    seed: int = 0

    def __post_init__(self):
        if self.grid < 1:
            raise ValueError("grid must be at least 1")
        if not 1 <= self.candidates <= self.grid ** 3:
            raise ValueError("candidates must be in [1, grid^3]")
        if min(self.rounds, self.sub_iters) < 1:
            raise ValueError("rounds and sub_iters must be positive")


@dataclass
class Candidate:
    """One refined grid initialization."""

    omega0: np.ndarray
    omega_hat: np.ndarray
    t_hat: np.ndarray
    e_reg: float
    history: list = field(default_factory=list)  # error after each round
    diverged: bool = False


@dataclass
class PoseEstimate:
    """Winning pose with full search diagnostics."""

    omega: np.ndarray
    translation: np.ndarray
    e_reg: float
    candidates: list
    grid_errors: np.ndarray
    refine_rounds: int

    @property
    def pose(self) -> PoseSE3:
        return PoseSE3(self.omega.copy(), self.translation.copy())


def candidate_grid(steps: int) -> np.ndarray:
    """(steps^3, 3) Euler triples 2*pi*t/steps, t in 1..steps, per axis."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    vals = 2.0 * np.pi * np.arange(1, steps + 1) / steps
    mesh = np.meshgrid(vals, vals, vals, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, 3)


def _check_reference(variant, theta_ref, prior):
    if variant == "v2":
        if theta_ref is None:
            raise ValueError("v2 needs reference parameters")
    elif variant == "v1":
        if prior is None:
            raise ValueError("v1 needs the shared prior")
        if prior.config.scope != "first_layer_full":
            raise ValueError("v1 needs the full first-layer scope")
    else:
        raise ValueError(f"unknown variant {variant!r}")


def registration_error(theta_ref: LevelSetParams | None, omega, t,
                       cloud: np.ndarray, variant: str = "v2",
                       prior: SharedPrior | None = None,
                       delta: ShapeDelta | None = None) -> float:
    """Mean |f| of the pose-conditioned field at the cloud points."""
    _check_reference(variant, theta_ref, prior)
    P = as_points(cloud)
    if len(P) == 0:
        raise ValueError("empty point cloud")
    omega = np.asarray(omega, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if variant == "v2":
        moved = (P - t) @ euler_to_rotation(omega)
        vals = evaluate(theta_ref, moved)
    else:
        params = realize_theta(prior, delta, PoseSE3(omega, t))
        vals = evaluate(params, P)
    return float(np.abs(vals).mean())


def _grid_errors_v2(theta_ref, P, grid) -> np.ndarray:
    rotations = np.stack([euler_to_rotation(w) for w in grid])
    queries = np.einsum("nj,gjk->gnk", P, rotations).reshape(-1, 3)
    vals = np.concatenate(
        [np.abs(evaluate(theta_ref, queries[lo:lo + _EVAL_CHUNK]))
         for lo in range(0, len(queries), _EVAL_CHUNK)])
    return vals.reshape(len(grid), len(P)).mean(axis=1)


def _grid_errors_v1(prior, delta, P, grid) -> np.ndarray:
    zero = np.zeros(3)
    out = np.empty(len(grid))
    for i, w in enumerate(grid):
        params = realize_theta(prior, delta, PoseSE3(w, zero))
        out[i] = np.abs(evaluate(params, P)).mean()
    return out


def _const_layers(params: LevelSetParams) -> dict:
    layers = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases), start=1):
        layers[f"W{i}"] = Tensor(w)
        layers[f"b{i}"] = Tensor(b)
    return layers


def _const_hyper(prior: SharedPrior) -> dict:
    h = prior.hyper
    out = {}
    for i, (w, b) in enumerate(zip(h.eta_weights, h.eta_biases), start=1):
        out[f"hyper.etaW{i}"] = Tensor(w)
        out[f"hyper.etab{i}"] = Tensor(b)
    out["hyper.Y"] = Tensor(h.Y)
    out["hyper.fc1w"] = Tensor(h.fc1_w)
    out["hyper.fc1b"] = Tensor(h.fc1_b)
    out["hyper.fc2w"] = Tensor(h.fc2_w)
    return out


class _ErrorFn:
    """Registration error as a tape graph of the pose variables."""

    def __init__(self, variant, theta_ref, prior, delta, P):
        self.variant = variant
        self.P = P
        if variant == "v2":
            self.config = theta_ref.config
            self.layers = _const_layers(theta_ref)
        else:
            self.config = prior.config.sdf
            self.hconst = _const_hyper(prior)
            self.hcfg = prior.config
            self.prior = prior
            self.delta = delta
            self.tanh_dy = None if delta is None else np.tanh(delta.deltaY)
            self.mu = {}
            for i in range(2, self.config.depth + 1):
                w = prior.mu_weights[i - 1].copy()
                b = prior.mu_biases[i - 1].copy()
                if delta is not None:
                    w += np.tanh(delta.delta_weights[i - 2])
                    b += np.tanh(delta.delta_biases[i - 2])
                self.mu[i] = (Tensor(w), Tensor(b))

    def __call__(self, omega_t: Tensor, t_t: Tensor) -> Tensor:
        if self.variant == "v2":
            R = euler_to_rotation_t(omega_t)
            moved = (Tensor(self.P) - t_t) @ R
            vals, _ = forward_t(self.layers, self.config, moved,
                                with_spatial_grad=False)
        else:
            pose_vec = pose_input_t(omega_t, t_t)
            pieces, B = generate_t(self.hconst, self.hcfg, pose_vec)
            layers = {"W1": pieces["W1"], "b1": pieces["b1"]}
            if self.delta is not None:
                scale = 1.0 / (self.hcfg.latent_rows * self.hcfg.latent_cols)
                d1 = (B * Tensor(self.tanh_dy)).sum(axis=(1, 2)) * scale
                block = d1.reshape((self.config.hidden, 4))
                layers["W1"] = layers["W1"] + block[:, :3]
                layers["b1"] = layers["b1"] + block[:, 3]
            for i, (w, b) in self.mu.items():
                layers[f"W{i}"], layers[f"b{i}"] = w, b
            vals, _ = forward_t(layers, self.config, self.P,
                                with_spatial_grad=False)
        return vals.abs().mean()


def _alternate(err_fn: _ErrorFn, omega0, cfg: PoseSearchConfig) -> Candidate:
    """Alternating angle/translation refinement of one grid candidate.

    Keeps the best pose visited, the grid start included, so refinement
    never degrades a candidate.
    """
    omega0 = np.asarray(omega0, dtype=np.float64).copy()
    w = Tensor(omega0.copy(), requires_grad=True, name="omega")
    t = Tensor(np.zeros(3), requires_grad=True, name="t")
    opt_w = Adam({"omega": w}, lr=cfg.lr_omega)
    opt_t = Adam({"t": t}, lr=cfg.lr_trans)
    e0 = float(err_fn(Tensor(omega0), Tensor(np.zeros(3))).data)
    cand = Candidate(omega0, omega0.copy(), np.zeros(3),
                     e0 if np.isfinite(e0) else np.inf,
                     diverged=not np.isfinite(e0))
    if cand.diverged:
        return cand

    def steps(opt):
        for _ in range(cfg.sub_iters):
            e = err_fn(w, t)
            if not np.isfinite(e.data):
                return False
            opt.zero_grad()
            backward(e)
            opt.step()
        return True

    for _ in range(cfg.rounds):
        if not (steps(opt_w) and steps(opt_t)):
            cand.diverged = True
            return cand
        now = float(err_fn(Tensor(w.data), Tensor(t.data)).data)
        cand.history.append(now)
        if np.isfinite(now) and now < cand.e_reg:
            cand.omega_hat = w.data.copy()
            cand.t_hat = t.data.copy()
            cand.e_reg = now
    return cand


def _polish(err_fn, cand: Candidate, cfg: PoseSearchConfig):
    """Continue the alternation on the winner until the error stalls."""
    w = Tensor(cand.omega_hat.copy(), requires_grad=True, name="omega")
    t = Tensor(cand.t_hat.copy(), requires_grad=True, name="t")
    opt_w = Adam({"omega": w}, lr=cfg.lr_omega)
    opt_t = Adam({"t": t}, lr=cfg.lr_trans)
    best = (cand.omega_hat.copy(), cand.t_hat.copy(), cand.e_reg)
    prev = cand.e_reg
    rounds = 0
    for rounds in range(1, cfg.max_refine_rounds + 1):
        for opt in (opt_w, opt_t):
            for _ in range(cfg.sub_iters):
                e = err_fn(w, t)
                if not np.isfinite(e.data):
                    return best + (rounds,)
                opt.zero_grad()
                backward(e)
                opt.step()
        now = float(err_fn(Tensor(w.data), Tensor(t.data)).data)
        if now < best[2]:
            best = (w.data.copy(), t.data.copy(), now)
        if abs(prev - now) < cfg.refine_tol:
            break
        prev = now
    return best + (rounds,)


def _map_candidates(fn, items):
    workers = int(os.environ.get("LSPLAB_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def estimate_pose(theta_ref: LevelSetParams | None, cloud: np.ndarray,
                  cfg: PoseSearchConfig = PoseSearchConfig(),
                  variant: str = "v2", prior: SharedPrior | None = None,
                  delta: ShapeDelta | None = None) -> PoseEstimate:
    """Recover the rigid pose moving the reference onto the observed cloud.

    Scans the full angle grid at zero translation, refines the best
    ``cfg.candidates`` initializations by alternating optimization, then
    polishes the winner (smallest error; earlier candidate on ties) until
    the error change drops below ``cfg.refine_tol``.
    """
    _check_reference(variant, theta_ref, prior)
    P = as_points(cloud)
    if len(P) == 0:
        raise ValueError("empty point cloud")
    if cfg.max_points is not None and len(P) > cfg.max_points:
        idx = make_rng(cfg.seed, "pose-subsample").choice(
            len(P), size=cfg.max_points, replace=False)
        P = P[idx]

    grid = candidate_grid(cfg.grid)
    if variant == "v2":
        errors = _grid_errors_v2(theta_ref, P, grid)
    else:
        errors = _grid_errors_v1(prior, delta, P, grid)
    ranked = np.lexsort((np.arange(len(grid)),
                         np.where(np.isfinite(errors), errors, np.inf)))
    selected = ranked[:cfg.candidates]

    err_fn = _ErrorFn(variant, theta_ref, prior, delta, P)
    cands = _map_candidates(lambda i: _alternate(err_fn, grid[i], cfg),
                            selected)
    finals = np.array([c.e_reg for c in cands])
    if not np.isfinite(finals).any():
        raise RuntimeError("all pose candidates diverged")
    winner = cands[int(np.lexsort((np.arange(len(cands)), finals))[0])]
    omega, t, e_reg, rounds = _polish(err_fn, winner, cfg)
    return PoseEstimate(omega.copy(), t.copy(), e_reg, cands, errors, rounds)


# ---------------------------------------------------------------------------
# estimator wrapper


class CloudPoseEstimator(BaseEstimator):
    """Estimator wrapper around :func:`estimate_pose`.

    ``fit`` stores the reference: the field parameters for variant "v2", or
    a ``(prior, delta)`` pair for "v1". ``predict`` maps observed clouds to
    rows ``[alpha, beta, gamma, tx, ty, tz]``; full search diagnostics land
    in ``estimates_``.
    """

    def __init__(self, grid: int = 15, candidates: int = 20, rounds: int = 20,
                 sub_iters: int = 10, lr_omega: float = 0.05,
                 lr_trans: float = 0.01, refine_tol: float = 1e-6,
                 max_refine_rounds: int = 100, max_points: int | None = 300,
                 seed: int = 0, variant: str = "v2"):
        self.grid = grid
        self.candidates = candidates
        self.rounds = rounds
        self.sub_iters = sub_iters
        self.lr_omega = lr_omega
        self.lr_trans = lr_trans
        self.refine_tol = refine_tol
        self.max_refine_rounds = max_refine_rounds
        self.max_points = max_points
        self.seed = seed
        self.variant = variant

    def _config(self) -> PoseSearchConfig:
        return PoseSearchConfig(
            grid=self.grid, candidates=self.candidates, rounds=self.rounds,
            sub_iters=self.sub_iters, lr_omega=self.lr_omega,
            lr_trans=self.lr_trans, refine_tol=self.refine_tol,
            max_refine_rounds=self.max_refine_rounds,
            max_points=self.max_points, seed=self.seed)

    def fit(self, X, y=None):
        """Store the reference: LevelSetParams, or (prior, delta) for v1."""
        self._config()  # fail fast on bad search settings
        if self.variant == "v1":
            prior, delta = X if isinstance(X, tuple) else (X, None)
            self.theta_, self.prior_, self.delta_ = None, prior, delta
        else:
            self.theta_, self.prior_, self.delta_ = X, None, None
        _check_reference(self.variant, self.theta_, self.prior_)
        return self

    def predict(self, X) -> np.ndarray:
        """Pose rows for each observed cloud.

        ``X`` is one cloud (n, 3) or a sequence of clouds; a single cloud
        yields a (1, 6) result.
        """
        if not hasattr(self, "theta_"):
            raise NotFittedError("CloudPoseEstimator is not fitted yet")
        clouds = [X] if (isinstance(X, np.ndarray) and X.ndim == 2) else X
        cfg = self._config()
        self.estimates_ = [
            estimate_pose(self.theta_, cloud, cfg, variant=self.variant,
                          prior=self.prior_, delta=self.delta_)
            for cloud in clouds]
        return np.stack([np.concatenate([est.omega, est.translation])
                         for est in self.estimates_])
