"""Two-stage construction of a dataset of level-set parameters.

Stage 1 trains the pose-conditioned shared prior: the hypernetwork (with its
latents and output heads) that emits first-layer parameters per pose, plus
directly trainable parameters for the remaining layers, jointly over a small
set of shapes under random rigid transforms. Per-shape latent offsets (added
raw to the latents) absorb shape identity during this stage and are discarded
afterwards; the prior is then frozen.

Stage 2 fits one shape against the frozen prior: trainable latent offsets for
layer 1 (combined with the pose coefficients through a tanh bound) and
per-entry offsets for the deeper layers (also tanh-bounded), optimized over
batches of pose clones of the shape with an L1 penalty on the offsets. The
result is a compact per-shape record realizable at any pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, ExponentialDecay, Tensor, backward
from .geometry import (PoseSE3, SurfaceSamples, family_shape, make_rng,
                       sample_pose, sample_shape)
from .hypernet import (HyperConfig, HyperParams, coefficients, generate,
                       generate_t, hyper_to_tensors, init_hyper, pose_input,
                       tensors_to_hyper)
from .metrics import chamfer_l1, eval_over_poses, sample_level_set
from .sdf import (LevelSetParams, LossConfig, SdfConfig, TrainingDiverged,
                  build_loss, init_geometric)


@dataclass
class SharedPrior:
    """Frozen pose-conditioned parameter expectation.

    ``mu_weights``/``mu_biases`` have one entry per field layer; entries the
    hypernetwork generates (layer 1 under the default scope) are None.
    """

    hyper: HyperParams
    mu_weights: list
    mu_biases: list

    @property
    def config(self) -> HyperConfig:
        return self.hyper.config

    @property
    def sdf_config(self) -> SdfConfig:
        return self.hyper.config.sdf

    def arrays(self) -> list:
        out = list(self.hyper.eta_weights) + list(self.hyper.eta_biases)
        out += [self.hyper.Y, self.hyper.fc1_w, self.hyper.fc1_b, self.hyper.fc2_w]
        out += [a for a in self.mu_weights if a is not None]
        out += [a for a in self.mu_biases if a is not None]
        return out

    def freeze(self) -> "SharedPrior":
        for a in self.arrays():
            a.flags.writeable = False
        return self

    def copy(self) -> "SharedPrior":
        return SharedPrior(
            self.hyper.copy(),
            [None if a is None else a.copy() for a in self.mu_weights],
            [None if a is None else a.copy() for a in self.mu_biases])


def random_prior(config: HyperConfig, seed: int = 0) -> SharedPrior:
    """Untrained prior: initialized hypernetwork plus geometric-init layers."""
    hyper = init_hyper(config, seed)
    mu = init_geometric(config.sdf, seed + 1)
    gen_w, gen_b = _generated_pieces(config)
    weights = [None if f"W{i}" in gen_w else mu.weights[i - 1]
               for i in range(1, config.sdf.depth + 1)]
    biases = [None if f"b{i}" in gen_b else mu.biases[i - 1]
              for i in range(1, config.sdf.depth + 1)]
    return SharedPrior(hyper, weights, biases).freeze()


def _generated_pieces(config: HyperConfig):
    """(weight names, bias names) the hypernetwork produces for this scope."""
    if config.scope == "first_layer_full":
        return {"W1"}, {"b1"}
    if config.scope == "first_layer_bias_only":
        return set(), {"b1"}
    return set(), {f"b{i}" for i in range(1, config.sdf.depth + 1)}


@dataclass
class ShapeDelta:
    """Per-shape offsets from the shared prior (default scope only).

    ``deltaY`` shifts the layer-1 latents through the pose coefficients and a
    tanh bound; ``delta_weights``/``delta_biases`` hold pre-tanh offsets for
    layers 2..depth (index 0 is layer 2). All zero at initialization.
    """

    config: HyperConfig
    deltaY: np.ndarray
    delta_weights: list
    delta_biases: list
    shape_id: str = ""
    fit_quality: dict | None = None

    @classmethod
    def zero(cls, config: HyperConfig, shape_id: str = "") -> "ShapeDelta":
        if config.scope != "first_layer_full":
            raise ValueError("shape deltas require the full first-layer scope")
        dims = config.sdf.layer_dims()
        return cls(config,
                   np.zeros((config.n_slots, config.latent_rows, config.latent_cols)),
                   [np.zeros((o, i)) for o, i in dims[1:]],
                   [np.zeros(o) for o, _ in dims[1:]],
                   shape_id=shape_id)

    def copy(self) -> "ShapeDelta":
        return ShapeDelta(self.config, self.deltaY.copy(),
                          [w.copy() for w in self.delta_weights],
                          [b.copy() for b in self.delta_biases],
                          self.shape_id, None if self.fit_quality is None
                          else dict(self.fit_quality))

    def entry_count(self) -> int:
        return self.deltaY.size + sum(w.size for w in self.delta_weights) \
            + sum(b.size for b in self.delta_biases)

    def l1_sum(self) -> float:
        return float(np.abs(self.deltaY).sum()
                     + sum(np.abs(w).sum() for w in self.delta_weights)
                     + sum(np.abs(b).sum() for b in self.delta_biases))


def regularized_loss(base: float, delta: ShapeDelta, lambda_reg: float) -> float:
    """base + (lambda_reg / K) * (sum |deltaY| + sum |delta a|), K = entry count."""
    k = delta.entry_count()
    if k == 0:
        raise ValueError("delta has no entries")
    return float(base) + lambda_reg / k * delta.l1_sum()


def first_layer_delta(config: HyperConfig, B: np.ndarray,
                      deltaY: np.ndarray) -> np.ndarray:
    """Realized layer-1 offset block (H, 4): mean over (i, j) of B * tanh(dY)."""
    scale = 1.0 / (config.latent_rows * config.latent_cols)
    d = (B * np.tanh(deltaY)).sum(axis=(1, 2)) * scale
    return d.reshape(config.sdf.hidden, 4)


def realize_theta(prior: SharedPrior, delta: ShapeDelta | None,
                  pose: PoseSE3) -> LevelSetParams:
    """Field parameters of the prior (plus optional per-shape offsets) at a pose.

    Layer 1 comes from the hypernetwork; with a delta, its pose-weighted
    tanh-bounded offset is added. Deeper layers are the shared values plus
    tanh of the per-entry offsets.
    """
    cfg = prior.config
    if delta is not None and cfg.scope != "first_layer_full":
        raise ValueError("per-shape deltas are defined for the default scope only")
    pieces = generate(prior.hyper, pose)
    weights, biases = [], []
    for i in range(1, cfg.sdf.depth + 1):
        w = pieces.get(f"W{i}", prior.mu_weights[i - 1])
        b = pieces.get(f"b{i}", prior.mu_biases[i - 1])
        weights.append(np.array(w, dtype=np.float64))
        biases.append(np.array(b, dtype=np.float64))
    if delta is not None:
        block = first_layer_delta(cfg, coefficients(prior.hyper, pose), delta.deltaY)
        weights[0] = weights[0] + block[:, :3]
        biases[0] = biases[0] + block[:, 3]
        for i in range(2, cfg.sdf.depth + 1):
            weights[i - 1] = weights[i - 1] + np.tanh(delta.delta_weights[i - 2])
            biases[i - 1] = biases[i - 1] + np.tanh(delta.delta_biases[i - 2])
    return LevelSetParams(weights, biases, cfg.sdf).validate()


def delta_theta(prior: SharedPrior, delta: ShapeDelta,
                pose: PoseSE3) -> LevelSetParams:
    """The realized offset component alone: realize(delta) - realize(None)."""
    return realize_theta(prior, delta, pose).subtract(
        realize_theta(prior, None, pose))


# ---------------------------------------------------------------------------
# stage 1


@dataclass
class Stage1Config:
    """Shared-prior training settings."""

    hyper: HyperConfig = field(default_factory=HyperConfig)
    epochs: int = 600
    shape_batch: int = 4
    poses_fixed: int = 16
    poses_fly: int = 16
    batch_on: int = 128
    batch_off: int = 128
    lr: float = 1e-3
    lr_gamma: float = 0.998
    lr_every: int = 30
    rotation: str = "so3"
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0


@dataclass
class Stage1Result:
    prior: SharedPrior
    history: list  # per-epoch mean training loss


def _fixed_pose_pool(n: int, rotation: str, rng) -> list:
    """n poses sharing the reference (identity) pose as the first entry."""
    pool = [PoseSE3.identity()]
    while len(pool) < n:
        pool.append(sample_pose(rng, rotation=rotation))
    return pool


def train_stage1(shapes: list, cfg: Stage1Config = Stage1Config()) -> Stage1Result:
    """Learn the shared prior over several shapes under random rigid motions.

    Every epoch shuffles the shapes into batches; each shape draws one pose
    from the pool of fixed plus freshly drawn transforms, its samples are
    moved to that pose, layer-1 parameters are generated from the pose (with
    the shape's own raw latent offset), and one optimizer step follows per
    batch. The per-shape offsets exist only during training.
    """
    if len(shapes) < 2:
        raise ValueError("stage 1 needs at least two shapes")
    for s in shapes:
        if len(s.points) == 0:
            raise ValueError("stage 1 received a shape without surface samples")
    hcfg = cfg.hyper
    sdf_cfg = hcfg.sdf
    gen_w, gen_b = _generated_pieces(hcfg)

    ht = hyper_to_tensors(init_hyper(hcfg, cfg.seed))
    mu0 = init_geometric(sdf_cfg, cfg.seed + 1)
    mu_t = {}
    for i in range(1, sdf_cfg.depth + 1):
        if f"W{i}" not in gen_w:
            mu_t[f"W{i}"] = Tensor(mu0.weights[i - 1].copy(), requires_grad=True,
                                   name=f"mu.W{i}")
        if f"b{i}" not in gen_b:
            mu_t[f"b{i}"] = Tensor(mu0.biases[i - 1].copy(), requires_grad=True,
                                   name=f"mu.b{i}")
    dy_t = [Tensor(np.zeros_like(ht["hyper.Y"].data), requires_grad=True,
                   name=f"dY{b}") for b in range(len(shapes))]

    trainables = {**ht, **{f"mu.{k}": v for k, v in mu_t.items()},
                  **{f"dY{b}": t for b, t in enumerate(dy_t)}}
    opt = Adam(trainables, lr=cfg.lr)
    sched = ExponentialDecay(cfg.lr, cfg.lr_gamma, cfg.lr_every)
    rng = make_rng(cfg.seed, "stage1")
    fixed = _fixed_pose_pool(cfg.poses_fixed, cfg.rotation,
                             make_rng(cfg.seed, "stage1-fixed"))

    history = []
    order = np.arange(len(shapes))
    for epoch in range(cfg.epochs):
        fly = [sample_pose(rng, rotation=cfg.rotation)
               for _ in range(cfg.poses_fly)]
        pool = fixed + fly
        rng.shuffle(order)
        epoch_losses = []
        for lo in range(0, len(order), cfg.shape_batch):
            batch = order[lo:lo + cfg.shape_batch]
            total = None
            for b in batch:
                samples = shapes[b]
                pose = pool[rng.integers(len(pool))]
                n_on = len(samples.points)
                idx = rng.choice(n_on, size=min(cfg.batch_on, n_on), replace=False)
                moved = SurfaceSamples(
                    pose.apply(samples.points[idx]),
                    pose.apply_normals(samples.normals[idx]),
                    rng.uniform(-1.0, 1.0, size=(cfg.batch_off, 3)))
                pieces, _ = generate_t(ht, hcfg, pose_input(pose), deltaY=dy_t[b])
                layers = {**mu_t, **{k: v for k, v in pieces.items()}}
                loss_b, _, _ = build_loss(layers, sdf_cfg, moved, cfg.loss)
                total = loss_b if total is None else total + loss_b
            total = total * (1.0 / len(batch))
            if not np.isfinite(total.data):
                raise TrainingDiverged(epoch)
            opt.zero_grad()
            backward(total)
            opt.lr = sched.at(epoch)
            opt.step()
            epoch_losses.append(float(total.data))
        history.append(float(np.mean(epoch_losses)))

    hyper_final = tensors_to_hyper(ht, hcfg)
    weights = [mu_t[f"W{i}"].data.copy() if f"W{i}" in mu_t else None
               for i in range(1, sdf_cfg.depth + 1)]
    biases = [mu_t[f"b{i}"].data.copy() if f"b{i}" in mu_t else None
              for i in range(1, sdf_cfg.depth + 1)]
    prior = SharedPrior(hyper_final, weights, biases).freeze()
    return Stage1Result(prior, history)


# ---------------------------------------------------------------------------
# stage 2


@dataclass
class Stage2Config:
    """Per-shape delta fitting settings."""

    iterations: int = 400
    clones: int = 2
    poses_fixed: int = 16
    poses_fly: int = 16
    batch_on: int = 128
    batch_off: int = 128
    lr: float = 1e-3
    lr_gamma: float = 0.998
    lr_every: int = 30
    lambda_reg: float = 1e-2
    rotation: str = "so3"
    loss: LossConfig = field(default_factory=LossConfig)
    snapshot_every: int = 50
    stop_loss: float | None = None
    reject_cd1: float = 3.0  # threshold on CD1 x 100
    eval_poses: int = 10
    eval_points: int = 4096
    eval_resolution: int = 24
    seed: int = 0


@dataclass
class Stage2Result:
    delta: ShapeDelta
    history: list   # (iteration, probe data loss)
    stopped_at: int | None  # iteration where stop_loss was reached, if any


def _stage2_layers(prior: SharedPrior, pose: PoseSE3, dy: Tensor,
                   dw: list, db: list) -> dict:
    """Tape layer dict at a pose: frozen prior constants plus bounded offsets."""
    cfg = prior.config
    pieces = generate(prior.hyper, pose)
    B = coefficients(prior.hyper, pose)
    scale = 1.0 / (cfg.latent_rows * cfg.latent_cols)
    d1 = (Tensor(B) * dy.tanh()).sum(axis=(1, 2)) * scale
    block = d1.reshape((cfg.sdf.hidden, 4))
    layers = {"W1": Tensor(pieces["W1"]) + block[:, :3],
              "b1": Tensor(pieces["b1"]) + block[:, 3]}
    for i in range(2, cfg.sdf.depth + 1):
        layers[f"W{i}"] = Tensor(prior.mu_weights[i - 1]) + dw[i - 2].tanh()
        layers[f"b{i}"] = Tensor(prior.mu_biases[i - 1]) + db[i - 2].tanh()
    return layers


def _probe_loss(prior, samples, dy, dw, db, loss_cfg) -> float:
    layers = _stage2_layers(prior, PoseSE3.identity(), dy, dw, db)
    total, _, _ = build_loss(layers, prior.sdf_config, samples, loss_cfg)
    return float(total.data)


def train_stage2(samples: SurfaceSamples, prior: SharedPrior,
                 cfg: Stage2Config = Stage2Config(), shape_id: str = "",
                 gt_shape=None) -> Stage2Result:
    """Fit one shape's offsets against the frozen prior over pose clones.

    Each iteration draws ``clones`` poses from the fixed-plus-fresh pool,
    realizes the offset field at each, and minimizes the mean fitting loss
    plus the L1 offset penalty. The best offsets by a fixed identity-pose
    probe are returned; ``gt_shape`` enables the multi-pose quality summary
    (with the rejection flag) on the result.
    """
    if cfg.clones < 1:
        raise ValueError("need at least one pose clone per step")
    if len(samples.points) == 0:
        raise ValueError("stage 2 received a shape without surface samples")
    hcfg = prior.config
    if hcfg.scope != "first_layer_full":
        raise ValueError("stage 2 requires the full first-layer scope")
    delta0 = ShapeDelta.zero(hcfg, shape_id)
    k_entries = delta0.entry_count()

    dy = Tensor(delta0.deltaY.copy(), requires_grad=True, name="deltaY")
    dw = [Tensor(w.copy(), requires_grad=True, name=f"dW{i+2}")
          for i, w in enumerate(delta0.delta_weights)]
    db = [Tensor(b.copy(), requires_grad=True, name=f"db{i+2}")
          for i, b in enumerate(delta0.delta_biases)]
    trainables = {"deltaY": dy, **{t.name: t for t in dw},
                  **{t.name: t for t in db}}
    opt = Adam(trainables, lr=cfg.lr)
    sched = ExponentialDecay(cfg.lr, cfg.lr_gamma, cfg.lr_every)
    rng = make_rng(cfg.seed, "stage2", shape_id)
    fixed = _fixed_pose_pool(cfg.poses_fixed, cfg.rotation,
                             make_rng(cfg.seed, "stage2-fixed", shape_id))

    probe = samples
    if len(samples.off_points) == 0:
        probe = SurfaceSamples(samples.points, samples.normals,
                               make_rng(cfg.seed, "stage2-probe").uniform(
                                   -1.0, 1.0, size=(len(samples.points), 3)))

    def current_delta() -> ShapeDelta:
        return ShapeDelta(hcfg, dy.data.copy(), [w.data.copy() for w in dw],
                          [b.data.copy() for b in db], shape_id)

    best = current_delta()
    best_loss = _probe_loss(prior, probe, dy, dw, db, cfg.loss)
    history = [(0, best_loss)]
    stopped_at = None
    if cfg.stop_loss is not None and best_loss < cfg.stop_loss:
        stopped_at = 0

    n_on = len(samples.points)
    it = 0
    while it < cfg.iterations and stopped_at is None:
        it += 1
        fly = [sample_pose(rng, rotation=cfg.rotation)
               for _ in range(cfg.poses_fly)]
        pool = fixed + fly
        total = None
        for _ in range(cfg.clones):
            pose = pool[rng.integers(len(pool))]
            idx = rng.choice(n_on, size=min(cfg.batch_on, n_on), replace=False)
            moved = SurfaceSamples(
                pose.apply(samples.points[idx]),
                pose.apply_normals(samples.normals[idx]),
                rng.uniform(-1.0, 1.0, size=(cfg.batch_off, 3)))
            layers = _stage2_layers(prior, pose, dy, dw, db)
            loss_c, _, _ = build_loss(layers, hcfg.sdf, moved, cfg.loss)
            total = loss_c if total is None else total + loss_c
        total = total * (1.0 / cfg.clones)
        penalty = dy.abs().sum()
        for t in dw + db:
            penalty = penalty + t.abs().sum()
        total = total + penalty * (cfg.lambda_reg / k_entries)
        if not np.isfinite(total.data):
            raise TrainingDiverged(it)
        opt.zero_grad()
        backward(total)
        opt.lr = sched.at(it)
        opt.step()

        if it % cfg.snapshot_every == 0 or it == cfg.iterations:
            loss_now = _probe_loss(prior, probe, dy, dw, db, cfg.loss)
            history.append((it, loss_now))
            if loss_now < best_loss:
                best_loss = loss_now
                best = current_delta()
            if cfg.stop_loss is not None and loss_now < cfg.stop_loss:
                stopped_at = it

    if gt_shape is not None:
        final = best

        def realize(pose):
            return realize_theta(prior, final, pose)

        summary = eval_over_poses(realize, gt_shape, n_poses=cfg.eval_poses,
                                  n_points=cfg.eval_points,
                                  resolution=cfg.eval_resolution,
                                  seed=cfg.seed, rotation=cfg.rotation)
        quality = {k: summary[k] for k in
                   ("cd1_mean", "cd1_std", "nc_mean", "nc_std")}
        # The rejection gate scores the canonical reconstruction; pose
        # variability is reported separately above.
        gt = sample_shape(gt_shape, cfg.eval_points, 0,
                          make_rng(cfg.seed, "stage2-eval-gt"))
        try:
            pts, _ = sample_level_set(realize(PoseSE3.identity()),
                                      cfg.eval_points,
                                      cfg.eval_resolution, seed=cfg.seed)
            quality["cd1_canonical"] = float(chamfer_l1(pts, gt.points))
        except ValueError:
            quality["cd1_canonical"] = float("inf")
        quality["rejected"] = bool(
            100.0 * quality["cd1_canonical"] > cfg.reject_cd1)
        best.fit_quality = quality
    return Stage2Result(best, history, stopped_at)


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass
class DatasetRecord:
    shape_id: str
    family: str
    delta: ShapeDelta
    fit_quality: dict | None
    rejected: bool


def build_family_dataset(prior: SharedPrior, families: list, per_family: int,
                         cfg: Stage2Config = Stage2Config(), n_on: int = 600,
                         n_off: int = 600, seed: int = 0,
                         evaluate_quality: bool = False) -> list:
    """Stage-2 records for randomized members of the given families."""
    records = []
    for family in families:
        for index in range(per_family):
            shape = family_shape(family, index, seed)
            shape_id = f"{family}-{index:03d}"
            rng = make_rng(seed, "dataset-samples", shape_id)
            samples = sample_shape(shape, n_on, n_off, rng)
            result = train_stage2(samples, prior, cfg, shape_id=shape_id,
                                  gt_shape=shape if evaluate_quality else None)
            quality = result.delta.fit_quality
            records.append(DatasetRecord(
                shape_id, family, result.delta, quality,
                bool(quality["rejected"]) if quality else False))
    return records
