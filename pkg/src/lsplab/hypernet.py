"""Pose-conditioned generation of first-layer field parameters.

A four-layer MLP (``eta``) maps a pose, encoded as the flattened rotation
matrix plus translation, to a bounded coefficient block B (tanh output, one
I x J matrix per generated scalar). Each generated scalar also owns a latent
I x J matrix Y drawn from N(0, 1). A coefficient-weighted combination

    z_j = sum_i B_ij Y_ij,     zhat_j = z_j / sqrt(sum_i B_ij^2)

restores unit variance per column, so a small linear head on zhat can emit
weights with exactly the N(0, sigma^2) statistics of the geometric
initialization, while a second head (zero-initialized) emits biases that
start at exactly zero. Conditioning scope is configurable: by default the
full first layer is generated; the two reduced variants generate only bias
vectors (first layer, or every layer).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat
from .geometry import euler_to_rotation_t, make_rng
from .sdf import SdfConfig

SCOPES = ("first_layer_full", "first_layer_bias_only", "all_layer_biases")


@dataclass(frozen=True)
class HyperConfig:
    """Hypernetwork structure tied to one field architecture."""

    sdf: SdfConfig = field(default_factory=SdfConfig)
    scope: str = "first_layer_full"
    latent_rows: int = 2   # I
    latent_cols: int = 8   # J
    eta_hidden: tuple = (256, 256, 256)

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise ValueError(f"scope must be one of {SCOPES}")
        if self.latent_rows < 1 or self.latent_cols < 1:
            raise ValueError("latent dimensions must be positive")

    def slots(self) -> list:
        """(piece name, scalar count) for every generated parameter piece.

        Pieces are named after the field parameters they fill; the default
        scope emits one combined "layer1" piece covering the H x 4 block
        (three weight columns plus the bias column).
        """
        H = self.sdf.hidden
        if self.scope == "first_layer_full":
            return [("layer1", H * 4)]
        if self.scope == "first_layer_bias_only":
            return [("b1", H)]
        return [(f"b{i}", out_dim)
                for i, (out_dim, _) in enumerate(self.sdf.layer_dims(), start=1)]

    @property
    def n_slots(self) -> int:
        return sum(count for _, count in self.slots())

    @property
    def eta_out(self) -> int:
        return self.n_slots * self.latent_rows * self.latent_cols

    @property
    def sigma(self) -> float:
        return float(np.sqrt(2.0 / self.sdf.hidden))


@dataclass
class HyperParams:
    """Trainable state: eta layers, latents Y, and the two output heads."""

    config: HyperConfig
    eta_weights: list
    eta_biases: list
    Y: np.ndarray          # (n_slots, I, J)
    fc1_w: np.ndarray      # (J,)  bias head weights
    fc1_b: np.ndarray      # (1,)  bias head offset
    fc2_w: np.ndarray      # (J,)  weight head

    def validate(self) -> "HyperParams":
        cfg = self.config
        dims = _eta_dims(cfg)
        if len(self.eta_weights) != len(dims):
            raise ValueError("eta layer count mismatch")
        for W, b, (out_d, in_d) in zip(self.eta_weights, self.eta_biases, dims):
            if W.shape != (out_d, in_d) or b.shape != (out_d,):
                raise ValueError(f"eta layer shape {W.shape}/{b.shape} != {(out_d, in_d)}")
        if self.Y.shape != (cfg.n_slots, cfg.latent_rows, cfg.latent_cols):
            raise ValueError(f"Y shape {self.Y.shape} mismatch")
        if np.linalg.norm(self.fc2_w) == 0.0:
            raise ValueError("weight-head vector must be nonzero")
        return self

    def copy(self) -> "HyperParams":
        return HyperParams(self.config,
                           [w.copy() for w in self.eta_weights],
                           [b.copy() for b in self.eta_biases],
                           self.Y.copy(), self.fc1_w.copy(),
                           self.fc1_b.copy(), self.fc2_w.copy())


def _eta_dims(cfg: HyperConfig) -> list:
    chans = list(cfg.eta_hidden) + [cfg.eta_out]
    dims = []
    in_d = 12
    for out_d in chans:
        dims.append((out_d, in_d))
        in_d = out_d
    return dims


def init_hyper(config: HyperConfig, seed: int = 0) -> HyperParams:
    """Distribution-preserving initialization.

    Latents are standard normal; the bias head is all zero (so generated
    biases start at exactly zero); the weight head is a random unit vector
    (so generated weights start exactly N(0, sigma^2) for every pose).
    """
    rng = make_rng(seed, "hyper-init")
    eta_w, eta_b = [], []
    for out_d, in_d in _eta_dims(config):
        eta_w.append(rng.normal(0.0, np.sqrt(2.0 / in_d), size=(out_d, in_d)))
        eta_b.append(np.zeros(out_d))
    Y = rng.normal(size=(config.n_slots, config.latent_rows, config.latent_cols))
    fc2 = rng.normal(size=config.latent_cols)
    while np.linalg.norm(fc2) <= 1e-3:
        fc2 = rng.normal(size=config.latent_cols)
    fc2 = fc2 / np.linalg.norm(fc2)
    return HyperParams(config, eta_w, eta_b, Y,
                       np.zeros(config.latent_cols), np.zeros(1), fc2).validate()


# ---------------------------------------------------------------------------
# numpy path


def pose_input(pose) -> np.ndarray:
    """Flattened rotation matrix followed by the translation (12 values)."""
    return np.concatenate([pose.rotation.ravel(), pose.translation])


def coefficients(hyper: HyperParams, pose) -> np.ndarray:
    """Coefficient block B at a pose: tanh-bounded, shape (n_slots, I, J)."""
    x = pose_input(pose)
    for i, (W, b) in enumerate(zip(hyper.eta_weights, hyper.eta_biases)):
        x = W @ x + b
        if i + 1 < len(hyper.eta_weights):
            x = np.maximum(x, 0.0)
    cfg = hyper.config
    return np.tanh(x).reshape(cfg.n_slots, cfg.latent_rows, cfg.latent_cols)


def combine_normalize(B: np.ndarray, Y: np.ndarray):
    """z and column-normalized zhat for stacked (.., I, J) blocks.

    Columns whose coefficient norm falls below 1e-12 produce zhat = 0 and
    are flagged in the returned boolean mask.
    """
    z = (B * Y).sum(axis=-2)
    col = np.sqrt((B * B).sum(axis=-2))
    degenerate = col < 1e-12
    safe = np.where(degenerate, 1.0, col)
    zhat = np.where(degenerate, 0.0, z / safe)
    return z, zhat, degenerate


def generate(hyper: HyperParams, pose, deltaY: np.ndarray | None = None) -> dict:
    """Generated field-parameter pieces at a pose.

    ``deltaY`` (same shape as Y) is added to the latents before combination.
    Returns {"W1": (H, 3), "b1": (H,)} for the full scope, or per-layer bias
    vectors for the reduced scopes.
    """
    cfg = hyper.config
    B = coefficients(hyper, pose)
    Yeff = hyper.Y if deltaY is None else hyper.Y + deltaY
    z, zhat, _ = combine_normalize(B, Yeff)  # (n_slots, J)
    w = hyper.fc2_w
    out = {}
    if cfg.scope == "first_layer_full":
        H = cfg.sdf.hidden
        z3 = z.reshape(H, 4, cfg.latent_cols)
        zh3 = zhat.reshape(H, 4, cfg.latent_cols)
        out["W1"] = cfg.sigma * (zh3[:, :3, :] @ w) / (w @ w)
        out["b1"] = z3[:, 3, :] @ hyper.fc1_w + hyper.fc1_b[0]
        return out
    offset = 0
    for name, count in cfg.slots():
        zi = z[offset:offset + count]
        out[name] = zi @ hyper.fc1_w + hyper.fc1_b[0]
        offset += count
    return out


def generate_first_layer(hyper: HyperParams, pose,
                         deltaY: np.ndarray | None = None) -> np.ndarray:
    """The H x 4 first-layer block (weight columns then bias column)."""
    if hyper.config.scope != "first_layer_full":
        raise ValueError("full first-layer block requires the default scope")
    pieces = generate(hyper, pose, deltaY)
    return np.concatenate([pieces["W1"], pieces["b1"][:, None]], axis=1)


# ---------------------------------------------------------------------------
# tape path


def hyper_to_tensors(hyper: HyperParams, prefix: str = "hyper.") -> dict:
    out = {}
    for i, (W, b) in enumerate(zip(hyper.eta_weights, hyper.eta_biases), start=1):
        out[f"{prefix}etaW{i}"] = Tensor(W.copy(), requires_grad=True, name=f"{prefix}etaW{i}")
        out[f"{prefix}etab{i}"] = Tensor(b.copy(), requires_grad=True, name=f"{prefix}etab{i}")
    out[f"{prefix}Y"] = Tensor(hyper.Y.copy(), requires_grad=True, name=f"{prefix}Y")
    out[f"{prefix}fc1w"] = Tensor(hyper.fc1_w.copy(), requires_grad=True, name=f"{prefix}fc1w")
    out[f"{prefix}fc1b"] = Tensor(hyper.fc1_b.copy(), requires_grad=True, name=f"{prefix}fc1b")
    out[f"{prefix}fc2w"] = Tensor(hyper.fc2_w.copy(), requires_grad=True, name=f"{prefix}fc2w")
    return out


def tensors_to_hyper(tensors: dict, config: HyperConfig, prefix: str = "hyper.") -> HyperParams:
    n_layers = len(_eta_dims(config))
    return HyperParams(
        config,
        [tensors[f"{prefix}etaW{i}"].data.copy() for i in range(1, n_layers + 1)],
        [tensors[f"{prefix}etab{i}"].data.copy() for i in range(1, n_layers + 1)],
        tensors[f"{prefix}Y"].data.copy(),
        tensors[f"{prefix}fc1w"].data.copy(),
        tensors[f"{prefix}fc1b"].data.copy(),
        tensors[f"{prefix}fc2w"].data.copy()).validate()


def pose_input_t(omega: Tensor, translation: Tensor) -> Tensor:
    """Tape version of :func:`pose_input` from angle/translation tensors."""
    R = euler_to_rotation_t(omega)
    return concat([R.reshape((9,)), translation]).reshape((1, 12))


def coefficients_t(tensors: dict, config: HyperConfig, pose_vec,
                   prefix: str = "hyper.") -> Tensor:
    """Tape coefficient block from a (1, 12) pose encoding."""
    x = pose_vec if isinstance(pose_vec, Tensor) else Tensor(np.asarray(pose_vec).reshape(1, 12))
    n_layers = len(_eta_dims(config))
    for i in range(1, n_layers + 1):
        x = x @ tensors[f"{prefix}etaW{i}"].T + tensors[f"{prefix}etab{i}"]
        if i < n_layers:
            x = x.relu()
    return x.tanh().reshape((config.n_slots, config.latent_rows, config.latent_cols))


def generate_t(tensors: dict, config: HyperConfig, pose_vec,
               deltaY: Tensor | None = None, prefix: str = "hyper."):
    """Tape version of :func:`generate`; also returns the B block.

    The returned pieces are differentiable with respect to the hypernetwork
    parameters, the latents, ``deltaY`` and the pose encoding.
    """
    B = coefficients_t(tensors, config, pose_vec, prefix=prefix)
    Y = tensors[f"{prefix}Y"]
    if deltaY is not None:
        Y = Y + deltaY
    z = (B * Y).sum(axis=1)  # (n_slots, J)
    col_sq = (B * B).sum(axis=1)
    degenerate = col_sq.data < 1e-24
    mask = Tensor((~degenerate).astype(np.float64))
    safe = (col_sq * mask + (Tensor(1.0) - mask)).sqrt()
    zhat = z / safe * mask
    w = tensors[f"{prefix}fc2w"]
    fc1w = tensors[f"{prefix}fc1w"]
    fc1b = tensors[f"{prefix}fc1b"]
    J = config.latent_cols
    pieces = {}
    if config.scope == "first_layer_full":
        H = config.sdf.hidden
        z3 = z.reshape((H, 4, J))
        zh3 = zhat.reshape((H, 4, J))
        dots = (zh3[:, :3, :] * w).sum(axis=2)
        pieces["W1"] = dots * (Tensor(config.sigma) / (w * w).sum())
        pieces["b1"] = (z3[:, 3, :] @ fc1w.reshape((J, 1)) + fc1b).reshape((H,))
        return pieces, B
    offset = 0
    for name, count in config.slots():
        zi = z[offset:offset + count]
        pieces[name] = (zi @ fc1w.reshape((J, 1)) + fc1b).reshape((count,))
        offset += count
    return pieces, B
