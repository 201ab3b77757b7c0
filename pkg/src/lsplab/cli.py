"""Command-line interface.

Every subcommand prints a single JSON document to stdout describing what it
produced (paths, metrics, and a reproducibility block with the seed and the
active configuration). Failures print one JSON line ``{"error": ...}`` to
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .cloudio import read_cloud, write_cloud, write_mesh_ply
from .container import (load_delta, load_encoder, load_params, load_prior,
                        save_delta, save_encoder, save_params, save_prior)
from .dataset import (Stage1Config, Stage2Config, build_family_dataset,
                      delta_theta, realize_theta, train_stage1)
from .encoder import (AugmentConfig, EncoderTrainConfig, encode_batch,
                      predict_proba, retrieval_metrics, tensorize,
                      train_classifier, write_embeddings_csv)
from .geometry import (FAMILIES, PoseSE3, SurfaceSamples, corrupt,
                       euler_to_rotation, family_shape, hidden_point_removal,
                       make_rng, make_shape, sample_shape)
from .hypernet import HyperConfig
from .metrics import (chamfer_l1, marching_cubes, normal_consistency, rre,
                      rte, sample_level_set)
from .pose import PoseSearchConfig, estimate_pose
from .sdf import FitConfig, LossConfig, SdfConfig, fit_shape
from .se3 import euclidean_transform


class CliError(ValueError):
    """User-facing command failure."""


# ---------------------------------------------------------------------------
# small parsers


def _parse_floats(text: str, count: int, what: str) -> np.ndarray:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != count:
        raise CliError(f"{what} needs {count} comma-separated numbers, "
                       f"got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise CliError(f"invalid {what}: {exc}") from exc


def _parse_pose(text: str) -> PoseSE3:
    vals = _parse_floats(text, 6, "pose (alpha,beta,gamma,tx,ty,tz)")
    return PoseSE3(vals[:3], vals[3:])


def _resolve_shape(spec: str, seed: int):
    """Canonical preset name, or ``family:index`` for a randomized member."""
    if ":" in spec:
        family, _, index = spec.partition(":")
        if family not in FAMILIES:
            raise CliError(f"unknown family {family!r} (known: {FAMILIES})")
        try:
            return family_shape(family, int(index), seed)
        except ValueError as exc:
            raise CliError(f"bad shape spec {spec!r}: {exc}") from exc
    try:
        return make_shape(spec)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _families_list(text: str) -> list:
    out = [f.strip() for f in text.split(",") if f.strip()]
    if not out:
        raise CliError("no families given")
    for f in out:
        if f not in FAMILIES:
            raise CliError(f"unknown family {f!r} (known: {FAMILIES})")
    return out


def _sdf_config(args) -> SdfConfig:
    try:
        return SdfConfig(depth=args.depth, hidden=args.hidden,
                         skip_at=args.skip_at, beta=args.beta)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _surface_cloud(path) -> SurfaceSamples:
    points, normals = read_cloud(path)
    if normals is None:
        raise CliError(f"{path} carries no normals; fitting requires them")
    if len(points) == 0:
        raise CliError(f"{path} is empty")
    return SurfaceSamples(points, normals, np.empty((0, 3)))


def _repro(seed, **config) -> dict:
    return {"seed": seed, "package": __version__,
            "numpy": np.__version__, "config": config}


def _add_arch_flags(p, hidden=256):
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--hidden", type=int, default=hidden)
    p.add_argument("--skip-at", type=int, default=4)
    p.add_argument("--beta", type=float, default=100.0)


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(args) -> dict:
    samples = _surface_cloud(args.cloud)
    config = _sdf_config(args)
    fit_cfg = FitConfig(iterations=args.iterations, lr=args.lr,
                        batch_on=args.batch_on, batch_off=args.batch_off,
                        seed=args.seed)
    result = fit_shape(samples, config, LossConfig(), fit_cfg)
    meta = {"shape_id": args.shape_id, "family": args.family,
            "seed": args.seed, "source": os.path.basename(str(args.cloud)),
            "best_loss": result.best_loss,
            "best_iteration": result.best_iteration}
    save_params(args.out, result.params, precision=args.precision, meta=meta)
    return {"command": "fit", "output": str(args.out),
            "n_points": len(samples.points),
            "best_loss": result.best_loss,
            "best_iteration": result.best_iteration,
            "reproducibility": _repro(args.seed, depth=config.depth,
                                      hidden=config.hidden,
                                      skip_at=config.skip_at,
                                      beta=config.beta,
                                      iterations=args.iterations,
                                      lr=args.lr)}


def cmd_sample_cloud(args) -> dict:
    shape = _resolve_shape(args.shape, args.family_seed)
    rng = make_rng(args.seed, "cli-sample", args.shape)
    samples = sample_shape(shape, args.n, 0, rng)
    points, normals = samples.points, samples.normals
    if args.pose:
        pose = _parse_pose(args.pose)
        points = pose.apply(points)
        normals = pose.apply_normals(normals)
    if args.viewpoint:
        vp = _parse_floats(args.viewpoint, 3, "viewpoint")
        keep = hidden_point_removal(points, vp)
        points, normals = points[keep], normals[keep]
    corrupted = args.noise_sigma > 0 or args.outlier_fraction > 0
    if corrupted:
        points = corrupt(points, args.noise_sigma, args.outlier_fraction,
                         make_rng(args.seed, "cli-corrupt"))
        normals = None  # displaced points no longer match surface normals
    write_cloud(args.out, points, normals)
    return {"command": "sample-cloud", "output": str(args.out),
            "shape": args.shape, "n_points": len(points),
            "with_normals": normals is not None,
            "pose": args.pose, "viewpoint": args.viewpoint,
            "reproducibility": _repro(args.seed, n=args.n,
                                      noise_sigma=args.noise_sigma,
                                      outlier_fraction=args.outlier_fraction,
                                      family_seed=args.family_seed)}


def cmd_transform(args) -> dict:
    pose = _parse_pose(args.pose)
    if args.variant == "v2":
        if not args.params:
            raise CliError("--variant v2 requires --params")
        params, meta = load_params(args.params)
        out = euclidean_transform(params, pose)
    else:
        if not (args.prior and args.delta):
            raise CliError("--variant v1 requires --prior and --delta")
        prior, _ = load_prior(args.prior)
        delta, meta = load_delta(args.delta)
        out = realize_theta(prior, delta, pose)
    meta = dict(meta)
    meta["pose"] = list(map(float, np.concatenate([pose.omega,
                                                   pose.translation])))
    meta["variant"] = args.variant
    save_params(args.out, out, precision=args.precision, meta=meta)
    return {"command": "transform", "variant": args.variant,
            "output": str(args.out), "pose": meta["pose"],
            "reproducibility": _repro(None, precision=args.precision)}


def cmd_build_prior(args) -> dict:
    families = _families_list(args.families)
    hyper_cfg = HyperConfig(sdf=_sdf_config(args), scope=args.scope)
    shapes = []
    names = []
    for family in families:
        for index in range(args.per_family):
            shape = family_shape(family, index, args.seed)
            names.append(f"{family}-{index:03d}")
            shapes.append(sample_shape(
                shape, args.n_samples, args.n_samples,
                make_rng(args.seed, "cli-prior-samples", names[-1])))
    cfg = Stage1Config(hyper=hyper_cfg, epochs=args.epochs,
                       shape_batch=args.shape_batch,
                       poses_fixed=args.poses_fixed,
                       poses_fly=args.poses_fly, batch_on=args.batch_on,
                       batch_off=args.batch_off, lr=args.lr, seed=args.seed)
    result = train_stage1(shapes, cfg)
    meta = {"families": families, "per_family": args.per_family,
            "epochs": args.epochs, "seed": args.seed,
            "final_loss": result.history[-1]}
    save_prior(args.out, result.prior, precision=args.precision, meta=meta)
    return {"command": "build-prior", "output": str(args.out),
            "n_shapes": len(shapes),
            "first_epoch_loss": result.history[0],
            "final_epoch_loss": result.history[-1],
            "reproducibility": _repro(args.seed, families=families,
                                      per_family=args.per_family,
                                      epochs=args.epochs,
                                      hidden=hyper_cfg.sdf.hidden,
                                      scope=args.scope)}


def cmd_build_dataset(args) -> dict:
    families = _families_list(args.families)
    if args.per_family < 1:
        raise CliError("--per-family must be at least 1")
    prior, _ = load_prior(args.prior)
    cfg = Stage2Config(iterations=args.iterations, clones=args.clones,
                       lambda_reg=args.lambda_reg, seed=args.seed)
    records = build_family_dataset(prior, families, args.per_family, cfg,
                                   n_on=args.n_samples, n_off=args.n_samples,
                                   seed=args.seed,
                                   evaluate_quality=args.evaluate_quality)
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    for rec in records:
        path = os.path.join(args.out_dir, f"{rec.shape_id}.lsp")
        save_delta(path, rec.delta, precision=args.precision,
                   meta={"family": rec.family, "seed": args.seed})
        quality = rec.fit_quality or {}
        rows.append({"shape_id": rec.shape_id, "family": rec.family,
                     "path": path, "rejected": int(rec.rejected),
                     "cd1_canonical": quality.get("cd1_canonical", "")})
    with open(args.manifest, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return {"command": "build-dataset", "manifest": str(args.manifest),
            "out_dir": str(args.out_dir), "n_records": len(records),
            "n_rejected": sum(r.rejected for r in records),
            "reproducibility": _repro(args.seed, families=families,
                                      per_family=args.per_family,
                                      iterations=args.iterations,
                                      lambda_reg=args.lambda_reg)}


def _read_manifest(path) -> list:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise CliError(f"cannot read manifest: {exc}") from exc
    if not rows:
        raise CliError(f"{path}: empty manifest")
    for need in ("shape_id", "family", "path"):
        if need not in rows[0]:
            raise CliError(f"{path}: manifest lacks a {need!r} column")
    return rows


def _manifest_tensors(rows, prior, manifest_path) -> list:
    """Offset tensors for every manifest row; relative paths resolve
    against the manifest's directory first."""
    base = os.path.dirname(os.path.abspath(str(manifest_path)))
    tensors = []
    for row in rows:
        path = row["path"]
        if not os.path.isabs(path):
            candidate = os.path.join(base, path)
            path = candidate if os.path.exists(candidate) else path
        delta, _ = load_delta(path)
        tensors.append(tensorize(
            delta_theta(prior, delta, PoseSE3.identity())))
    return tensors


def cmd_train_encoder(args) -> dict:
    rows = _read_manifest(args.manifest)
    prior, _ = load_prior(args.prior)
    tensors = _manifest_tensors(rows, prior, args.manifest)
    classes, labels = np.unique([r["family"] for r in rows],
                                return_inverse=True)
    if len(classes) < 2:
        raise CliError("training needs at least two families")
    augment = None if args.no_augment else AugmentConfig()
    cfg = EncoderTrainConfig(epochs=args.epochs, batch=args.batch,
                             lr=args.lr, val_fraction=args.val_fraction,
                             augmentation=augment,
                             feature_dropout=args.feature_dropout,
                             pe_bands=args.pe_bands, hidden=args.encoder_hidden,
                             seed=args.seed)
    enc, history = train_classifier(tensors, labels, prior.sdf_config, cfg)
    meta = {"classes": classes.tolist(), "seed": args.seed,
            "best_epoch": history["best_epoch"],
            "val_acc": max(history["val_acc"]) if history["val_acc"] else None}
    save_encoder(args.out, enc, precision=args.precision, meta=meta)
    return {"command": "train-encoder", "output": str(args.out),
            "classes": classes.tolist(), "n_shapes": len(tensors),
            "best_epoch": history["best_epoch"],
            "best_val_accuracy": meta["val_acc"],
            "reproducibility": _repro(args.seed, epochs=args.epochs,
                                      batch=args.batch,
                                      hidden=args.encoder_hidden,
                                      pe_bands=args.pe_bands,
                                      augmented=not args.no_augment)}


def _encoder_input(args, enc) -> list:
    if args.delta:
        if not args.prior:
            raise CliError("--delta requires --prior")
        prior, _ = load_prior(args.prior)
        pose = _parse_pose(args.pose) if args.pose else PoseSE3.identity()
        delta, _ = load_delta(args.delta)
        return [tensorize(delta_theta(prior, delta, pose))]
    if args.params:
        params, _ = load_params(args.params)
        if params.config != enc.sdf:
            raise CliError("parameter architecture does not match the encoder")
        return [tensorize(params)]
    raise CliError("give --delta (with --prior) or --params")


def cmd_classify(args) -> dict:
    enc, meta = load_encoder(args.encoder)
    tensors = _encoder_input(args, enc)
    proba = predict_proba(tensors, enc)[0]
    classes = meta.get("classes") or [str(i) for i in range(enc.n_classes)]
    order = np.argsort(-proba)
    return {"command": "classify",
            "label": classes[int(order[0])],
            "probabilities": {classes[i]: float(proba[i])
                              for i in range(len(classes))},
            "reproducibility": _repro(None, encoder=str(args.encoder))}


def _gallery(args):
    rows = _read_manifest(args.manifest)
    prior, _ = load_prior(args.prior)
    enc, meta = load_encoder(args.encoder)
    tensors = _manifest_tensors(rows, prior, args.manifest)
    features = encode_batch(tensors, enc)
    ids = [r["shape_id"] for r in rows]
    labels = [r["family"] for r in rows]
    return rows, features, ids, labels


def cmd_retrieve(args) -> dict:
    _, features, ids, labels = _gallery(args)
    try:
        metrics = retrieval_metrics(features, labels)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = {"command": "retrieve", "n_gallery": len(ids), "metrics": metrics,
           "reproducibility": _repro(None, encoder=str(args.encoder))}
    if args.query:
        if args.query not in ids:
            raise CliError(f"query {args.query!r} is not in the manifest")
        q = ids.index(args.query)
        dists = np.linalg.norm(features - features[q], axis=1)
        order = np.lexsort((np.arange(len(ids)), dists))
        order = [i for i in order if i != q][:args.top]
        out["query"] = args.query
        out["results"] = [{"shape_id": ids[i], "family": labels[i],
                           "distance": float(dists[i])} for i in order]
    return out


def cmd_export_embeddings(args) -> dict:
    _, features, ids, labels = _gallery(args)
    write_embeddings_csv(args.out, ids, labels, features)
    return {"command": "export-embeddings", "output": str(args.out),
            "rows": len(ids), "dim": int(features.shape[1]),
            "reproducibility": _repro(None, encoder=str(args.encoder))}


def cmd_estimate_pose(args) -> dict:
    points, _ = read_cloud(args.cloud)
    if len(points) == 0:
        raise CliError(f"{args.cloud} is empty")
    max_points = args.max_points if args.max_points > 0 else None
    cfg = PoseSearchConfig(grid=args.grid, candidates=args.candidates,
                           rounds=args.rounds, sub_iters=args.sub_iters,
                           lr_omega=args.lr_omega, lr_trans=args.lr_trans,
                           max_points=max_points, seed=args.seed)
    if args.variant == "v2":
        if not args.params:
            raise CliError("--variant v2 requires --params")
        params, _ = load_params(args.params)
        est = estimate_pose(params, points, cfg)
    else:
        if not (args.prior and args.delta):
            raise CliError("--variant v1 requires --prior and --delta")
        prior, _ = load_prior(args.prior)
        delta, _ = load_delta(args.delta)
        est = estimate_pose(None, points, cfg, variant="v1",
                            prior=prior, delta=delta)
    out = {"command": "estimate-pose", "variant": args.variant,
           "omega": est.omega.tolist(),
           "translation": est.translation.tolist(),
           "registration_error": est.e_reg,
           "n_candidates": len(est.candidates),
           "refine_rounds": est.refine_rounds,
           "reproducibility": _repro(args.seed, grid=args.grid,
                                     candidates=args.candidates,
                                     rounds=args.rounds,
                                     sub_iters=args.sub_iters,
                                     max_points=args.max_points)}
    if args.gt_pose:
        gt = _parse_pose(args.gt_pose)
        out["rre_degrees"] = rre(euler_to_rotation(est.omega), gt.rotation)
        out["rte"] = rte(est.translation, gt.translation)
    return out


def _field_params(args):
    if args.params:
        params, _ = load_params(args.params)
        return params
    if args.prior and args.delta:
        prior, _ = load_prior(args.prior)
        delta, _ = load_delta(args.delta)
        pose = _parse_pose(args.pose) if args.pose else PoseSE3.identity()
        return realize_theta(prior, delta, pose)
    raise CliError("give --params, or --prior with --delta")


def cmd_export_mesh(args) -> dict:
    params = _field_params(args)
    verts, faces = marching_cubes(params, args.resolution)
    if len(faces) == 0:
        raise CliError("the field has no surface inside the domain")
    write_mesh_ply(args.out, verts, faces)
    return {"command": "export-mesh", "output": str(args.out),
            "vertices": len(verts), "faces": len(faces),
            "resolution": args.resolution,
            "reproducibility": _repro(None, resolution=args.resolution)}


def cmd_eval(args) -> dict:
    params = _field_params(args)
    try:
        pts, nrm = sample_level_set(params, args.n_points,
                                    resolution=args.resolution,
                                    seed=args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if args.shape:
        shape = _resolve_shape(args.shape, args.family_seed)
        ref = sample_shape(shape, args.n_points, 0,
                           make_rng(args.seed, "cli-eval-ref"))
        ref_pts, ref_nrm = ref.points, ref.normals
        reference = args.shape
    elif args.ref_cloud:
        ref_pts, ref_nrm = read_cloud(args.ref_cloud)
        if len(ref_pts) == 0:
            raise CliError(f"{args.ref_cloud} is empty")
        reference = str(args.ref_cloud)
    else:
        raise CliError("give --shape or --ref-cloud as the reference")
    out = {"command": "eval", "reference": reference,
           "cd1_x100": 100.0 * chamfer_l1(pts, ref_pts),
           "n_points": args.n_points,
           "reproducibility": _repro(args.seed, resolution=args.resolution)}
    if ref_nrm is not None:
        out["normal_consistency"] = normal_consistency(pts, nrm,
                                                       ref_pts, ref_nrm)
    return out


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsplab",
        description="Shapes as level-set parameters of signed-distance "
                    "networks: fitting, SE(3) transforms, shared-prior "
                    "datasets, parameter-space features, pose estimation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a field to an oriented point cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--out", required=True)
    _add_arch_flags(p)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-on", type=int, default=512)
    p.add_argument("--batch-off", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", default="float32",
                   choices=("float32", "float64"))
    p.add_argument("--shape-id", default="")
    p.add_argument("--family", default="")
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("sample-cloud",
                       help="sample an analytic shape into a cloud file")
    p.add_argument("--shape", required=True,
                   help="preset name, or family:index")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--pose", default="",
                   help="alpha,beta,gamma,tx,ty,tz applied to the samples")
    p.add_argument("--viewpoint", default="",
                   help="x,y,z; keep only points visible from here")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--family-seed", type=int, default=0)
    p.set_defaults(fn=cmd_sample_cloud)

    p = sub.add_parser("transform",
                       help="move a parameter set by a rigid pose")
    p.add_argument("--pose", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="v2", choices=("v1", "v2"))
    p.add_argument("--params", default="")
    p.add_argument("--prior", default="")
    p.add_argument("--delta", default="")
    p.add_argument("--precision", default="float32",
                   choices=("float32", "float64"))
    p.set_defaults(fn=cmd_transform)

    p = sub.add_parser("build-prior",
                       help="train the pose-conditioned shared prior")
    p.add_argument("--families", required=True)
    p.add_argument("--per-family", type=int, default=2)
    p.add_argument("--out", required=True)
    _add_arch_flags(p, hidden=64)
    p.add_argument("--scope", default="first_layer_full")
    p.add_argument("--epochs", type=int, default=600)
    p.add_argument("--shape-batch", type=int, default=4)
    p.add_argument("--poses-fixed", type=int, default=16)
    p.add_argument("--poses-fly", type=int, default=16)
    p.add_argument("--batch-on", type=int, default=128)
    p.add_argument("--batch-off", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--n-samples", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", default="float32",
                   choices=("float32", "float64"))
    p.set_defaults(fn=cmd_build_prior)

    p = sub.add_parser("build-dataset",
                       help="fit per-shape offsets against a shared prior")
    p.add_argument("--prior", required=True)
    p.add_argument("--families", required=True)
    p.add_argument("--per-family", type=int, default=10)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--iterations", type=int, default=400)
    p.add_argument("--clones", type=int, default=2)
    p.add_argument("--lambda-reg", type=float, default=1e-2)
    p.add_argument("--n-samples", type=int, default=600)
    p.add_argument("--evaluate-quality", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", default="float32",
                   choices=("float32", "float64"))
    p.set_defaults(fn=cmd_build_dataset)

    p = sub.add_parser("train-encoder",
                       help="train the parameter-space family classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--feature-dropout", type=float, default=0.5)
    p.add_argument("--pe-bands", type=int, default=8)
    p.add_argument("--encoder-hidden", type=int, default=256)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", default="float32",
                   choices=("float32", "float64"))
    p.set_defaults(fn=cmd_train_encoder)

    p = sub.add_parser("classify",
                       help="predict the family of a parameter set")
    p.add_argument("--encoder", required=True)
    p.add_argument("--delta", default="")
    p.add_argument("--prior", default="")
    p.add_argument("--params", default="")
    p.add_argument("--pose", default="")
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("retrieve",
                       help="retrieval metrics (and optional query) over a "
                            "dataset manifest")
    p.add_argument("--encoder", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--query", default="")
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("export-embeddings",
                       help="write gallery feature vectors to CSV")
    p.add_argument("--encoder", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_embeddings)

    p = sub.add_parser("estimate-pose",
                       help="recover the rigid pose of an observed cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--variant", default="v2", choices=("v1", "v2"))
    p.add_argument("--params", default="")
    p.add_argument("--prior", default="")
    p.add_argument("--delta", default="")
    p.add_argument("--grid", type=int, default=15)
    p.add_argument("--candidates", type=int, default=20)
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--sub-iters", type=int, default=10)
    p.add_argument("--lr-omega", type=float, default=0.05)
    p.add_argument("--lr-trans", type=float, default=0.01)
    p.add_argument("--max-points", type=int, default=300,
                   help="cloud subsample for the search; <= 0 uses all points")
    p.add_argument("--gt-pose", default="")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_estimate_pose)

    p = sub.add_parser("export-mesh", help="triangulate the zero level set")
    p.add_argument("--params", default="")
    p.add_argument("--prior", default="")
    p.add_argument("--delta", default="")
    p.add_argument("--pose", default="")
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.set_defaults(fn=cmd_export_mesh)

    p = sub.add_parser("eval",
                       help="surface quality against an analytic shape or "
                            "a reference cloud")
    p.add_argument("--params", default="")
    p.add_argument("--prior", default="")
    p.add_argument("--delta", default="")
    p.add_argument("--pose", default="")
    p.add_argument("--shape", default="")
    p.add_argument("--ref-cloud", default="")
    p.add_argument("--n-points", type=int, default=20000)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--family-seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    return parser


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.fn(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # single machine-readable diagnostic line
        print(json.dumps({"error": str(exc),
                          "type": type(exc).__name__}), file=sys.stderr)
        return 1
    json.dump(result, sys.stdout, indent=2, sort_keys=False,
              default=_json_default)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
