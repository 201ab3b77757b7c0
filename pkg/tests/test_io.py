"""Container and cloud-file round trips."""

import json
import struct

import numpy as np
import pytest

from lsplab.cloudio import (CloudFormatError, read_cloud, read_cloud_csv,
                            read_cloud_ply, write_cloud, write_cloud_csv,
                            write_cloud_ply, write_mesh_ply)
from lsplab.container import (ContainerError, load, load_delta, load_encoder,
                              load_hyper, load_params, load_prior,
                              read_header, save_delta, save_encoder,
                              save_hyper, save_params, save_prior)
from lsplab.dataset import ShapeDelta, random_prior
from lsplab.encoder import init_encoder
from lsplab.geometry import make_rng
from lsplab.hypernet import HyperConfig, init_hyper
from lsplab.sdf import SdfConfig, init_geometric

DESK = SdfConfig(hidden=64)


def _arrays_equal(a_list, b_list):
    assert len(a_list) == len(b_list)
    for a, b in zip(a_list, b_list):
        if a is None or b is None:
            assert a is None and b is None
        else:
            assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# theta containers


def test_params_round_trip_float64(tmp_path):
    params = init_geometric(DESK, seed=3)
    path = tmp_path / "shape.lsp"
    save_params(path, params, precision="float64",
                meta={"shape_id": "s1", "family": "box", "seed": 3})
    loaded, meta = load_params(path)
    _arrays_equal(params.weights, loaded.weights)
    _arrays_equal(params.biases, loaded.biases)
    assert loaded.config == params.config
    assert meta == {"shape_id": "s1", "family": "box", "seed": 3}


def test_params_float32_quantizes_once(tmp_path):
    params = init_geometric(DESK, seed=4)
    path = tmp_path / "shape.lsp"
    save_params(path, params, precision="float32")
    first, _ = load_params(path)
    assert np.allclose(first.weights[0], params.weights[0], atol=1e-6)
    assert not np.array_equal(first.weights[0], params.weights[0])
    save_params(path, first, precision="float32")
    second, _ = load_params(path)
    _arrays_equal(first.weights, second.weights)
    _arrays_equal(first.biases, second.biases)


def test_header_readable_without_payload(tmp_path):
    path = tmp_path / "shape.lsp"
    save_params(path, init_geometric(DESK, seed=0), meta={"seed": 0})
    header = read_header(path)
    assert header["kind"] == "theta"
    assert header["format"] == 1
    assert header["precision"] == "float32"
    assert header["config"]["hidden"] == 64
    names = [a["name"] for a in header["arrays"]]
    assert names[:2] == ["W1", "b1"]
    assert len(names) == 2 * DESK.depth


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.lsp"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ContainerError):
        read_header(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "shape.lsp"
    save_params(path, init_geometric(DESK, seed=0))
    blob = path.read_bytes()
    path.write_bytes(blob[:-100])
    with pytest.raises(ContainerError):
        load_params(path)


def test_corrupt_header_rejected(tmp_path):
    path = tmp_path / "shape.lsp"
    body = b"{not json"
    path.write_bytes(b"LSP1" + struct.pack("<I", len(body)) + body)
    with pytest.raises(ContainerError):
        read_header(path)


def test_wrong_kind_rejected(tmp_path):
    path = tmp_path / "h.lsp"
    save_hyper(path, init_hyper(HyperConfig(sdf=DESK), seed=0))
    with pytest.raises(ContainerError):
        load_params(path)


def test_unknown_precision_rejected(tmp_path):
    with pytest.raises(ContainerError):
        save_params(tmp_path / "x.lsp", init_geometric(DESK, seed=0),
                    precision="float16")


# ---------------------------------------------------------------------------
# hyper / prior / delta


def test_hyper_round_trip(tmp_path):
    hyper = init_hyper(HyperConfig(sdf=DESK), seed=5)
    path = tmp_path / "gen.lsp"
    save_hyper(path, hyper, precision="float64")
    loaded, _ = load_hyper(path)
    _arrays_equal(hyper.eta_weights, loaded.eta_weights)
    _arrays_equal(hyper.eta_biases, loaded.eta_biases)
    assert np.array_equal(hyper.Y, loaded.Y)
    assert np.array_equal(hyper.fc2_w, loaded.fc2_w)
    assert loaded.config == hyper.config


def test_prior_round_trip(tmp_path):
    prior = random_prior(HyperConfig(sdf=DESK), seed=6)
    path = tmp_path / "prior.lsp"
    save_prior(path, prior, precision="float64", meta={"epochs": 600})
    loaded, meta = load_prior(path)
    assert meta["epochs"] == 600
    _arrays_equal(prior.mu_weights, loaded.mu_weights)
    _arrays_equal(prior.mu_biases, loaded.mu_biases)
    assert loaded.mu_weights[0] is None  # generated layer is not stored
    assert np.array_equal(prior.hyper.Y, loaded.hyper.Y)


def test_delta_round_trip(tmp_path):
    cfg = HyperConfig(sdf=DESK)
    rng = make_rng(7, "delta-io")
    ref = init_geometric(DESK, seed=0)
    delta = ShapeDelta(
        cfg, rng.standard_normal((cfg.n_slots, 2, 8)),
        [0.1 * rng.standard_normal(ref.weights[i].shape)
         for i in range(1, DESK.depth)],
        [0.1 * rng.standard_normal(ref.biases[i].shape)
         for i in range(1, DESK.depth)],
        shape_id="fam0-03", fit_quality={"cd1_canonical": 0.012})
    path = tmp_path / "delta.lsp"
    save_delta(path, delta, precision="float64")
    loaded, meta = load_delta(path)
    assert np.array_equal(delta.deltaY, loaded.deltaY)
    _arrays_equal(delta.delta_weights, loaded.delta_weights)
    _arrays_equal(delta.delta_biases, loaded.delta_biases)
    assert loaded.shape_id == "fam0-03"
    assert loaded.fit_quality == {"cd1_canonical": 0.012}
    assert meta["shape_id"] == "fam0-03"


def test_encoder_round_trip(tmp_path):
    enc = init_encoder(DESK, n_classes=3, pe_bands=8, hidden=32, seed=8)
    enc.net1.initialized = True
    enc.net1.run_mean[:] = 0.25
    path = tmp_path / "enc.lsp"
    save_encoder(path, enc, precision="float64", meta={"classes": ["a", "b", "c"]})
    loaded, meta = load_encoder(path)
    assert meta["classes"] == ["a", "b", "c"]
    assert loaded.n_classes == 3 and loaded.hidden == 32
    assert loaded.net1.initialized and not loaded.pool2a.initialized
    assert np.array_equal(enc.net1.run_mean, loaded.net1.run_mean)
    assert np.array_equal(enc.cls_w, loaded.cls_w)
    assert np.array_equal(enc.net3.w1, loaded.net3.w1)


def test_generic_load_dispatches(tmp_path):
    p1 = tmp_path / "a.lsp"
    p2 = tmp_path / "b.lsp"
    save_params(p1, init_geometric(DESK, seed=0))
    save_hyper(p2, init_hyper(HyperConfig(sdf=DESK), seed=0))
    kind1, obj1, _ = load(p1)
    kind2, obj2, _ = load(p2)
    assert kind1 == "theta" and obj1.config == DESK
    assert kind2 == "hyper" and obj2.config.sdf == DESK


def test_atomic_write_leaves_no_temp_files(tmp_path):
    save_params(tmp_path / "x.lsp", init_geometric(DESK, seed=0))
    leftovers = [p for p in tmp_path.iterdir() if p.name != "x.lsp"]
    assert leftovers == []


def test_header_is_valid_json(tmp_path):
    path = tmp_path / "x.lsp"
    save_params(path, init_geometric(DESK, seed=0))
    blob = path.read_bytes()
    (length,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8:8 + length].decode("utf-8"))
    assert header["payload_bytes"] == len(blob) - 8 - length


# ---------------------------------------------------------------------------
# clouds


def _cloud(n=50, seed=0):
    rng = make_rng(seed, "cloud-io")
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    nrm = rng.standard_normal((n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return pts, nrm


def test_ply_round_trip_with_normals(tmp_path):
    pts, nrm = _cloud()
    path = tmp_path / "c.ply"
    write_cloud_ply(path, pts, nrm)
    rp, rn = read_cloud_ply(path)
    assert np.allclose(rp, pts, atol=1e-6)
    assert np.allclose(rn, nrm, atol=1e-6)
    assert np.array_equal(rp, pts.astype(np.float32).astype(np.float64))


def test_ply_round_trip_points_only(tmp_path):
    pts, _ = _cloud(17)
    path = tmp_path / "c.ply"
    write_cloud_ply(path, pts)
    rp, rn = read_cloud_ply(path)
    assert rn is None
    assert rp.shape == (17, 3)


def test_ply_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_bytes(b"OFF\n1 2 3\n")
    with pytest.raises(CloudFormatError):
        read_cloud_ply(path)


def test_ply_rejects_ascii_format(tmp_path):
    path = tmp_path / "ascii.ply"
    path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 1\n"
                     b"property float x\nproperty float y\nproperty float z\n"
                     b"end_header\n0 0 0\n")
    with pytest.raises(CloudFormatError):
        read_cloud_ply(path)


def test_ply_rejects_truncated_payload(tmp_path):
    pts, _ = _cloud(40)
    path = tmp_path / "c.ply"
    write_cloud_ply(path, pts)
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(CloudFormatError):
        read_cloud_ply(path)


def test_csv_round_trip_exact(tmp_path):
    pts, nrm = _cloud(23)
    path = tmp_path / "c.csv"
    write_cloud_csv(path, pts, nrm)
    rp, rn = read_cloud_csv(path)
    assert np.array_equal(rp, pts)  # repr round-trips float64 exactly
    assert np.array_equal(rn, nrm)


def test_csv_without_normals(tmp_path):
    pts, _ = _cloud(9)
    path = tmp_path / "c.csv"
    write_cloud_csv(path, pts)
    rp, rn = read_cloud_csv(path)
    assert rn is None
    assert np.array_equal(rp, pts)


def test_csv_rejects_missing_header(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("0.1,0.2,0.3\n")
    with pytest.raises(CloudFormatError):
        read_cloud_csv(path)


def test_extension_dispatch(tmp_path):
    pts, nrm = _cloud(12)
    for name in ("c.ply", "c.csv"):
        path = tmp_path / name
        write_cloud(path, pts, nrm)
        rp, rn = read_cloud(path)
        assert rp.shape == (12, 3) and rn.shape == (12, 3)
    with pytest.raises(ValueError):
        write_cloud(tmp_path / "c.xyz", pts)


def test_mesh_export_structure(tmp_path):
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                      [0.0, 0.0, 1.0]])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    path = tmp_path / "m.ply"
    write_mesh_ply(path, verts, faces)
    blob = path.read_bytes()
    header, payload = blob.split(b"end_header\n", 1)
    assert b"element vertex 4" in header
    assert b"element face 2" in header
    assert len(payload) == 4 * 12 + 2 * (1 + 12)
    with pytest.raises(ValueError):
        write_mesh_ply(path, verts, np.array([[0, 1, 9]]))


def test_mesh_vertices_validated(tmp_path):
    with pytest.raises(ValueError):
        write_mesh_ply(tmp_path / "m.ply", np.zeros((3, 2)),
                       np.array([[0, 1, 2]]))
