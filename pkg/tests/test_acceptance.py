"""End-to-end acceptance checks, one test per criterion.

Each test prints a single summary line with its measured numbers and wall
time. The expensive shared artifacts (trained prior, offset dataset, fitted
reference fields) are module-scoped fixtures, so their build cost is charged
to the first criterion that needs them.
"""

import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation
from scipy.special import expit

from lsplab import cli
from lsplab.container import (load, save_delta, save_hyper, save_params)
from lsplab.dataset import (ShapeDelta, Stage1Config, Stage2Config,
                            build_family_dataset, delta_theta, random_prior,
                            realize_theta, train_stage1, train_stage2)
from lsplab.encoder import (EncoderTrainConfig, encode_batch, predict,
                            retrieval_metrics, tensorize, train_classifier)
from lsplab.geometry import (PoseSE3, SurfaceSamples, corrupt,
                             euler_to_rotation, family_shape,
                             hidden_point_removal, make_rng, make_shape,
                             sample_pose, sample_shape, sample_viewpoint)
from lsplab.hypernet import (HyperConfig, coefficients, combine_normalize,
                             generate, init_hyper)
from lsplab.metrics import (chamfer_l1, normal_consistency, rre, rte,
                            sample_level_set)
from lsplab.pose import PoseSearchConfig, estimate_pose
from lsplab.sdf import (FitConfig, LossConfig, SdfConfig, evaluate, fit_shape,
                        init_geometric, sdf_loss)
from lsplab.se3 import euclidean_transform

DESK = SdfConfig(hidden=64)
PRIOR_FAMILIES = ("sphere", "box", "torus")


def _elapsed(t0):
    return time.perf_counter() - t0


# ---------------------------------------------------------------------------
# shared artifacts


@pytest.fixture(scope="module")
def desk_prior():
    """Pose-conditioned prior trained on members 0-3 of three families."""
    shapes = [sample_shape(family_shape(f, i, seed=5), 600, 600,
                           make_rng(5, "acc-prior", f, i))
              for f in PRIOR_FAMILIES for i in range(4)]
    cfg = Stage1Config(hyper=HyperConfig(sdf=DESK), epochs=600, seed=5)
    return train_stage1(shapes, cfg).prior


@pytest.fixture(scope="module")
def fitted_trio():
    """sphere/box/torus fitted directly for 2000 iterations at H=64."""
    out = {}
    for name in PRIOR_FAMILIES:
        shape = make_shape(name)
        samples = sample_shape(shape, 1200, 1200, make_rng(11, "acc-fit", name))
        out[name] = fit_shape(samples, DESK,
                              fit_cfg=FitConfig(iterations=2000, seed=11)).params
    return out


@pytest.fixture(scope="module")
def offset_dataset(desk_prior):
    """Per-shape offsets for 3 families x 40 members against the prior."""
    cfg = Stage2Config(iterations=200, seed=17)
    records = build_family_dataset(desk_prior, list(PRIOR_FAMILIES), 40, cfg,
                                   n_on=400, n_off=400, seed=17)
    labels = np.array([PRIOR_FAMILIES.index(r.family) for r in records])
    return records, labels


@pytest.fixture(scope="module")
def asym_fields():
    """Three fields without rotational symmetry, for pose recovery."""
    out = []
    for name in ("asym1", "asym2", "asym3"):
        samples = sample_shape(make_shape(name), 1000, 1000,
                               make_rng(23, "acc-asym", name))
        out.append(fit_shape(samples, DESK,
                             fit_cfg=FitConfig(iterations=800, seed=23)).params)
    return out


# ---------------------------------------------------------------------------
# criterion 1: loss gradients against finite differences


def _make_flat_loss(config, samples, loss_cfg):
    """Tape-free loss of a flat parameter vector, the FD oracle.

    An independent forward-mode reimplementation: activations and their
    input Jacobians are propagated in plain numpy, so one evaluation costs
    microseconds and finite differencing every entry stays cheap.
    """
    slices = []
    k = 0
    for out_d, in_d in config.layer_dims():
        ws = slice(k, k + out_d * in_d)
        k += out_d * in_d
        slices.append((ws, slice(k, k + out_d), (out_d, in_d)))
        k += out_d
    X_all = np.vstack([samples.points, samples.off_points])
    n_all = len(X_all)
    n_on = len(samples.points)
    nrm = samples.normals
    beta = config.beta
    h3 = config.hidden - 3

    def loss(theta):
        # The input Jacobian rides along as three stacked row blocks
        # (d/dx, d/dy, d/dz), so every propagation is a single matmul.
        a = X_all
        jac = None
        for li, (ws, bs, shape) in enumerate(slices, start=1):
            W = theta[ws].reshape(shape)
            b = theta[bs]
            if config.has_skip and li == config.skip_consumer:
                u = a @ W[:, :h3].T + X_all @ W[:, h3:].T + b
                ju = jac @ W[:, :h3].T + np.repeat(W[:, h3:].T, n_all, axis=0)
            elif li == 1:
                u = X_all @ W.T + b
                ju = np.repeat(W.T, n_all, axis=0)
            else:
                u = a @ W.T + b
                ju = jac @ W.T
            if li == config.depth:
                f = u[:, 0]
                g = ju[:, 0].reshape(3, n_all).T
                break
            a = np.logaddexp(0.0, beta * u) / beta
            jac = np.tile(expit(beta * u), (3, 1)) * ju

        total = loss_cfg.lambda_dist_on * np.abs(f[:n_on]).mean()
        norms = np.sqrt((g ** 2).sum(axis=1) + 1e-24)
        total += loss_cfg.lambda_eik * ((norms - 1.0) ** 2).mean()

        g_on = g[:n_on]
        mask = (g_on ** 2).sum(axis=1) >= 1e-24
        denom = np.where(mask, norms[:n_on], 1.0)
        unit = g_on / denom[:, None]
        per_point = (np.abs(1.0 - (unit * nrm).sum(axis=1))
                     + np.abs(unit - nrm).sum(axis=1))
        total += loss_cfg.lambda_norm * (per_point * mask).sum() \
            / max(int(mask.sum()), 1)
        if loss_cfg.use_dist_off:
            total += loss_cfg.lambda_dist_off * np.exp(
                -loss_cfg.rho * np.abs(f[n_on:])).mean()
        return float(total)

    return loss


def _noisy_params(config, rng):
    params = init_geometric(config, seed=int(rng.integers(1 << 30)))
    for w, b in zip(params.weights, params.biases):
        w += rng.normal(0.0, 0.2, size=w.shape)
        b += rng.normal(0.0, 0.2, size=b.shape)
    return params


def _kink_free_samples(params, rng):
    """Sample points away from the |.| kinks of every loss term."""
    for _ in range(60):
        pts = rng.uniform(-0.6, 0.6, size=(6, 3))
        nrm = rng.normal(size=(6, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        off = rng.uniform(-0.9, 0.9, size=(4, 3))
        f_on, g_on = evaluate(params, pts, with_gradient=True)
        f_off = evaluate(params, off)
        unit = g_on / np.sqrt((g_on ** 2).sum(axis=1, keepdims=True) + 1e-24)
        if (np.abs(f_on).min() > 1e-3 and np.abs(f_off).min() > 1e-3
                and np.abs(1.0 - (unit * nrm).sum(axis=1)).min() > 1e-3
                and np.abs(unit - nrm).min() > 1e-4):
            return SurfaceSamples(pts, nrm, off)
    raise AssertionError("could not find kink-free sample points")


def test_loss_gradients_match_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    loss_cfg = LossConfig(use_dist_off=True)
    worst = 0.0
    for _ in range(20):
        depth = int(rng.integers(2, 9))
        hidden = int(rng.choice([8, 64]))
        skip = int(rng.integers(1, depth)) if rng.random() < 0.75 else 0
        config = SdfConfig(depth=depth, hidden=hidden, skip_at=skip)
        params = _noisy_params(config, rng)
        samples = _kink_free_samples(params, rng)

        result = sdf_loss(params, samples, loss_cfg)
        flat_loss = _make_flat_loss(config, samples, loss_cfg)
        flat = params.flatten()
        assert abs(flat_loss(flat) - result.value) \
            <= 1e-9 * max(1.0, abs(result.value))

        fd = np.empty_like(flat)
        work = flat.copy()
        for j in range(flat.size):
            h = 1e-6 * max(1.0, abs(flat[j]))
            v = flat[j]
            work[j] = v + h
            up = flat_loss(work)
            work[j] = v - h
            fd[j] = (up - flat_loss(work)) / (2.0 * h)
            work[j] = v

        # Relative error of the whole gradient vector: per-entry deviation
        # against the gradient's scale (layer-local scales can sit at the
        # FD noise floor when a layer is mostly saturated).
        got = np.concatenate(
            [np.concatenate([result.gradients[f"W{i+1}"].ravel(),
                             result.gradients[f"b{i+1}"]])
             for i in range(depth)])
        rel = np.abs(got - fd).max() / np.abs(fd).max()
        worst = max(worst, rel)
        assert rel < 1e-4, f"relative gradient error {rel:.2e}"
    dt = _elapsed(t0)
    assert dt < 120.0
    print(f"criterion 1 PASS: 20 configs, worst relative gradient error "
          f"{worst:.2e} < 1e-4 ({dt:.0f}s)")


# ---------------------------------------------------------------------------
# criterion 2: analytic parameter transform is exact


def test_parameter_transform_is_exact():
    t0 = time.perf_counter()
    quick = FitConfig(iterations=100, batch_on=256, batch_off=256, seed=31)
    worst = 0.0
    for k in range(10):
        family = PRIOR_FAMILIES[k % 3]
        samples = sample_shape(family_shape(family, k, seed=31), 500, 500,
                               make_rng(31, "acc-exact", k))
        params = fit_shape(samples, DESK, fit_cfg=quick).params
        rng = make_rng(31, "acc-exact-check", k)
        for _ in range(20):
            pose = sample_pose(rng)
            X = rng.uniform(-0.8, 0.8, size=(1000, 3))
            moved = euclidean_transform(params, pose)
            gap = np.abs(evaluate(moved, pose.apply(X))
                         - evaluate(params, X)).max()
            worst = max(worst, gap)
            assert gap < 1e-9
    dt = _elapsed(t0)
    assert dt < 60.0
    print(f"criterion 2 PASS: 10 shapes x 20 poses x 1000 points, max "
          f"|f'(Rx+t) - f(x)| = {worst:.2e} < 1e-9 ({dt:.0f}s)")


# ---------------------------------------------------------------------------
# criterion 3: hypernetwork initialization statistics


def test_hypernet_initialization_statistics():
    t0 = time.perf_counter()
    config = HyperConfig(sdf=SdfConfig())  # full width, sigma = sqrt(2/256)
    hyper = init_hyper(config, seed=41)
    sigma = config.sigma
    assert sigma == pytest.approx(np.sqrt(2.0 / 256.0))

    rng = make_rng(41, "acc-init-poses")
    pooled = []
    for _ in range(50):
        pieces = generate(hyper, sample_pose(rng))
        assert np.all(pieces["b1"] == 0.0)
        pooled.append(pieces["W1"].ravel())
    pooled = np.concatenate(pooled)
    assert abs(pooled.mean()) < 0.01
    assert 0.93 * sigma < pooled.std() < 1.07 * sigma

    B = coefficients(hyper, sample_pose(rng))[0]
    draws = make_rng(41, "acc-init-mc").normal(
        size=(100_000 // B.shape[1], *B.shape))
    _, zhat, _ = combine_normalize(B, draws)
    var = float(zhat.ravel().var())
    assert 0.97 < var < 1.03
    dt = _elapsed(t0)
    assert dt < 60.0
    print(f"criterion 3 PASS: biases exactly 0 over 50 poses, weight std "
          f"{pooled.std():.4f} vs {sigma:.4f}, zhat variance {var:.4f} "
          f"({dt:.0f}s)")


# ---------------------------------------------------------------------------
# criterion 4: direct single-shape fitting quality


def test_single_shape_fitting_quality(fitted_trio):
    t0 = time.perf_counter()
    report = []
    for name, params in fitted_trio.items():
        shape = make_shape(name)
        pts, nrm = sample_level_set(params, 20000, resolution=48, seed=13)
        ref = sample_shape(shape, 20000, 0, make_rng(13, "acc-eval", name))
        cd = 100.0 * chamfer_l1(pts, ref.points)
        nc = normal_consistency(pts, nrm, ref.points, ref.normals)
        report.append(f"{name} CD1x100={cd:.3f} NC={nc:.3f}")
        assert cd < 1.5, f"{name}: CD1x100 {cd:.3f}"
        assert nc > 0.95, f"{name}: NC {nc:.3f}"
    dt = _elapsed(t0)
    assert dt < 600.0
    print(f"criterion 4 PASS: {'; '.join(report)} ({dt:.0f}s)")


# ---------------------------------------------------------------------------
# criterion 5: the learned prior accelerates per-shape fitting


def test_learned_prior_accelerates_fitting(desk_prior):
    t0 = time.perf_counter()
    held_out = [(f, i) for i in range(4, 8) for f in PRIOR_FAMILIES][:10]
    wins = 0
    detail = []
    for k, (family, index) in enumerate(held_out):
        shape = family_shape(family, index, seed=5)
        samples = sample_shape(shape, 600, 600, make_rng(5, "acc-speed", k))

        trained = train_stage2(samples, desk_prior,
                               Stage2Config(iterations=400, snapshot_every=25,
                                            seed=100 + k))
        iters, losses = zip(*trained.history)
        threshold = min(losses)
        it_trained = iters[int(np.argmin(losses))]

        cold = random_prior(HyperConfig(sdf=DESK), seed=900 + k)
        random_run = train_stage2(samples, cold,
                                  Stage2Config(iterations=1500,
                                               snapshot_every=25,
                                               stop_loss=threshold,
                                               seed=100 + k))
        it_random = random_run.stopped_at
        ok = it_random is None or 3 * it_trained <= it_random
        wins += ok
        detail.append(f"{family}-{index}:{it_trained}/"
                      f"{it_random if it_random is not None else '>1500'}")
    dt = _elapsed(t0)
    assert wins >= 8, f"only {wins}/10 shapes show a 3x speedup ({detail})"
    assert dt < 1800.0
    print(f"criterion 5 PASS: {wins}/10 held-out shapes reach the threshold "
          f"in <= 1/3 of the random-init iterations [{', '.join(detail)}] "
          f"({dt:.0f}s)")


# ---------------------------------------------------------------------------
# criterion 6: offsets are semantically separable; transport matters


def _split(n, rng, frac=0.2):
    order = rng.permutation(n)
    n_test = int(round(frac * n))
    return order[n_test:], order[:n_test]


def _v1_offset(prior, delta, pose):
    return tensorize(delta_theta(prior, delta, pose))


def _v2_offset(prior, delta, pose):
    moved = euclidean_transform(realize_theta(prior, delta, PoseSE3.identity()),
                                pose)
    base = euclidean_transform(realize_theta(prior, None, PoseSE3.identity()),
                               pose)
    return tensorize(moved.subtract(base))


def test_offset_features_separate_families(offset_dataset, desk_prior):
    t0 = time.perf_counter()
    records, labels = offset_dataset
    rng = make_rng(19, "acc-encoder-split")
    train_idx, test_idx = _split(len(records), rng)

    identity = [_v1_offset(desk_prior, r.delta, PoseSE3.identity())
                for r in records]
    cfg = EncoderTrainConfig(epochs=60, seed=19)
    enc_fixed, _ = train_classifier([identity[i] for i in train_idx],
                                    labels[train_idx], DESK, cfg)
    acc_fixed = float(np.mean(
        predict([identity[i] for i in test_idx], enc_fixed)
        == labels[test_idx]))
    assert acc_fixed >= 0.90, f"fixed-pose accuracy {acc_fixed:.3f}"

    pose_rng = make_rng(19, "acc-encoder-poses")
    z_train, z_labels = [], []
    for i in train_idx:
        for _ in range(4):
            z_train.append(_v1_offset(desk_prior, records[i].delta,
                                      sample_pose(pose_rng, rotation="z")))
            z_labels.append(labels[i])
    enc_z, _ = train_classifier(z_train, z_labels, DESK, cfg)

    test_poses = [[sample_pose(pose_rng) for _ in range(6)] for _ in test_idx]
    so3_labels = np.repeat(labels[test_idx], 6)
    so3_v1 = [_v1_offset(desk_prior, records[i].delta, p)
              for i, poses in zip(test_idx, test_poses) for p in poses]
    so3_v2 = [_v2_offset(desk_prior, records[i].delta, p)
              for i, poses in zip(test_idx, test_poses) for p in poses]
    acc_v1 = float(np.mean(predict(so3_v1, enc_z) == so3_labels))
    acc_v2 = float(np.mean(predict(so3_v2, enc_z) == so3_labels))

    dt = _elapsed(t0)
    assert acc_v1 >= acc_fixed - 0.10, \
        f"pose-space transport dropped {acc_fixed - acc_v1:.3f} > 0.10"
    assert acc_v2 < acc_v1, \
        f"euclidean transport did not degrade more ({acc_v2:.3f} vs {acc_v1:.3f})"
    assert dt < 1800.0
    print(f"criterion 6 PASS: fixed-pose acc {acc_fixed:.3f} >= 0.90; "
          f"z->SO(3) acc {acc_v1:.3f} (drop {acc_fixed - acc_v1:+.3f}); "
          f"euclidean-transport acc {acc_v2:.3f} < {acc_v1:.3f} ({dt:.0f}s)")


# ---------------------------------------------------------------------------
# criterion 7: retrieval over the labeled gallery


def test_retrieval_quality(offset_dataset, desk_prior):
    t0 = time.perf_counter()
    records, labels = offset_dataset
    identity = [_v1_offset(desk_prior, r.delta, PoseSE3.identity())
                for r in records]
    cfg = EncoderTrainConfig(epochs=60, seed=19)
    rng = make_rng(19, "acc-encoder-split")
    train_idx, _ = _split(len(records), rng)
    enc, _ = train_classifier([identity[i] for i in train_idx],
                              labels[train_idx], DESK, cfg)
    metrics = retrieval_metrics(encode_batch(identity, enc),
                                [r.family for r in records])
    dt = _elapsed(t0)
    assert metrics["mAP"] >= 0.85, f"mAP {metrics['mAP']:.3f}"
    assert metrics["top1"] >= 0.85, f"top-1 {metrics['top1']:.3f}"
    assert dt < 300.0
    print(f"criterion 7 PASS: mAP {metrics['mAP']:.3f}, top-1 "
          f"{metrics['top1']:.3f}, top-5 {metrics['top5']:.3f} ({dt:.0f}s)")


# ---------------------------------------------------------------------------
# criterion 8: pose recovery from partial, corrupted clouds


def test_pose_recovery_under_corruption(asym_fields):
    t0 = time.perf_counter()
    search = PoseSearchConfig(grid=12, candidates=10, rounds=12, sub_iters=10,
                              max_points=250, seed=0)
    results = {"clean": [], "noise": [], "outliers": []}
    for s, params in enumerate(asym_fields):
        canonical, _ = sample_level_set(params, 1000, resolution=32,
                                        seed=50 + s)
        for trial in range(10):
            rng = make_rng(60, "acc-pose", s, trial)
            pose = sample_pose(rng)
            observed = pose.apply(canonical)
            partial = observed[hidden_point_removal(observed,
                                                    sample_viewpoint(rng))]
            assert len(partial) >= 80
            clouds = {
                "clean": partial,
                "noise": corrupt(partial, 0.01, 0.0, rng),
                "outliers": corrupt(partial, 0.01, 0.30, rng),
            }
            for cond, cloud in clouds.items():
                est = estimate_pose(params, cloud, search)
                results[cond].append(
                    (rre(euler_to_rotation(est.omega), pose.rotation),
                     rte(est.translation, pose.translation)))

    dt = _elapsed(t0)
    med = {c: np.median([r for r, _ in v]) for c, v in results.items()}
    rte_clean = np.median([100.0 * t for _, t in results["clean"]])
    rates = {c: np.mean([r < 10.0 for r, _ in v]) for c, v in results.items()}
    assert med["clean"] < 1.0, f"clean median RRE {med['clean']:.2f} deg"
    assert rte_clean < 0.5, f"clean median RTEx100 {rte_clean:.3f}"
    assert med["noise"] < 3.0, f"noisy median RRE {med['noise']:.2f} deg"
    assert med["outliers"] < 6.0, \
        f"outlier median RRE {med['outliers']:.2f} deg"
    for cond, rate in rates.items():
        assert rate >= 0.8, f"{cond}: success rate {rate:.2f}"
    assert dt < 3600.0
    print(f"criterion 8 PASS: median RRE clean {med['clean']:.2f} / noise "
          f"{med['noise']:.2f} / outliers {med['outliers']:.2f} deg, clean "
          f"RTEx100 {rte_clean:.3f}, success rates "
          f"{[f'{r:.2f}' for r in rates.values()]} ({dt:.0f}s)")


# ---------------------------------------------------------------------------
# criterion 9: error-metric identities


def test_error_metric_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(71)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    R_rel = Rotation.from_rotvec(np.deg2rad(30.0) * axis).as_matrix()
    R_gt = euler_to_rotation(rng.uniform(0, 2 * np.pi, size=3))
    assert abs(rre(R_gt @ R_rel, R_gt) - 30.0) < 1e-6
    assert rre(R_gt, R_gt) == 0.0

    t_err = rte(np.array([0.05, 0.06, 0.0]), np.array([0.02, 0.02, 0.0]))
    assert abs(100.0 * t_err - 5.0) < 1e-9

    a = rng.uniform(-1, 1, size=(300, 3))
    b = rng.uniform(-1, 1, size=(200, 3))
    assert chamfer_l1(a, b) == chamfer_l1(b, a)
    assert chamfer_l1(a, a) == 0.0
    dt = _elapsed(t0)
    print(f"criterion 9 PASS: 30-degree RRE and 5.0 RTEx100 identities, "
          f"chamfer symmetry and zero-on-identity exact ({dt:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 10: serialization stability and pipeline integration


def _random_theta(rng):
    depth = int(rng.integers(2, 8))
    hidden = int(rng.integers(8, 33))
    config = SdfConfig(depth=depth, hidden=hidden,
                       skip_at=int(rng.integers(1, depth)))
    params = init_geometric(config, seed=int(rng.integers(1 << 30)))
    for w in params.weights:
        w += rng.normal(size=w.shape)
    return params


def test_serialization_and_pipeline(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(83)
    for k in range(100):
        precision = "float64" if k % 2 == 0 else "float32"
        path = tmp_path / f"rt{k}.lsp"
        kind = k % 3
        if kind == 0:
            obj = _random_theta(rng)
            save_params(path, obj, precision=precision)
            flat = [*obj.weights, *obj.biases]
        elif kind == 1:
            hcfg = HyperConfig(sdf=SdfConfig(depth=4, hidden=16, skip_at=2))
            obj = init_hyper(hcfg, seed=int(rng.integers(1 << 30)))
            save_hyper(path, obj, precision=precision)
            flat = [*obj.eta_weights, *obj.eta_biases, obj.Y, obj.fc2_w]
        else:
            hcfg = HyperConfig(sdf=SdfConfig(depth=3, hidden=12, skip_at=1))
            base = ShapeDelta.zero(hcfg, f"s{k}")
            obj = ShapeDelta(hcfg, rng.normal(size=base.deltaY.shape),
                             [rng.normal(size=w.shape)
                              for w in base.delta_weights],
                             [rng.normal(size=b.shape)
                              for b in base.delta_biases], f"s{k}")
            save_delta(path, obj, precision=precision)
            flat = [obj.deltaY, *obj.delta_weights, *obj.delta_biases]

        _, first, _ = load(path)
        if precision == "float64":
            for orig, got in zip(flat, _flat_arrays(first)):
                assert np.array_equal(orig, got)
        path2 = tmp_path / f"rt{k}b.lsp"
        _save_again(path2, first, precision)
        _, second, _ = load(path2)
        for one, two in zip(_flat_arrays(first), _flat_arrays(second)):
            assert np.array_equal(one, two)

    # end-to-end command chain on a fresh working directory
    cloud = tmp_path / "c.ply"
    theta = tmp_path / "t.lsp"
    moved = tmp_path / "m.lsp"
    obs = tmp_path / "o.ply"
    pose = "0.3,0.0,0.0,0.02,0.0,0.0"
    steps = [
        ["sample-cloud", "--shape", "asym1", "--n", "500", "--out",
         str(cloud), "--seed", "1"],
        ["fit", "--cloud", str(cloud), "--out", str(theta), "--hidden", "64",
         "--iterations", "120", "--seed", "1"],
        ["transform", "--params", str(theta), "--pose", pose, "--out",
         str(moved)],
        ["sample-cloud", "--shape", "asym1", "--n", "400", "--out", str(obs),
         "--pose", pose, "--seed", "2"],
        ["estimate-pose", "--params", str(theta), "--cloud", str(obs),
         "--grid", "4", "--candidates", "3", "--rounds", "4",
         "--sub-iters", "5", "--max-points", "120", "--gt-pose", pose],
        ["eval", "--params", str(moved), "--ref-cloud", str(obs),
         "--n-points", "2000", "--resolution", "24"],
    ]
    for argv in steps:
        assert cli.main(argv) == 0, f"pipeline step {argv[0]} failed"
    dt = _elapsed(t0)
    print(f"criterion 10 PASS: 100 container round-trips bitwise stable; "
          f"fit->transform->estimate-pose->eval exit 0 ({dt:.0f}s)")


def _flat_arrays(obj):
    if hasattr(obj, "weights"):
        return [*obj.weights, *obj.biases]
    if hasattr(obj, "eta_weights"):
        return [*obj.eta_weights, *obj.eta_biases, obj.Y, obj.fc2_w]
    return [obj.deltaY, *obj.delta_weights, *obj.delta_biases]


def _save_again(path, obj, precision):
    if hasattr(obj, "weights"):
        save_params(path, obj, precision=precision)
    elif hasattr(obj, "eta_weights"):
        save_hyper(path, obj, precision=precision)
    else:
        save_delta(path, obj, precision=precision)
