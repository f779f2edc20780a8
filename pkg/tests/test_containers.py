import numpy as np
import pytest

from anchorsynth.containers import (
    load_anchors,
    load_array,
    load_motion,
    save_anchors,
    save_array,
    save_motion,
)
from anchorsynth.motion import ControlFamily, Motion
from anchorsynth.scaffold import Anchor, AnchorSet


def test_json_array_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.normal(size=(7, 3, 3)) * 1e-7  # awkward magnitudes
    path = tmp_path / "arr.json"
    save_array(path, arr)
    back = load_array(path)
    assert back.shape == arr.shape
    assert np.array_equal(back, arr)  # repr floats round-trip bit-exactly


def test_binary_array_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(1)
    arr = rng.normal(size=(4, 5))
    path = tmp_path / "arr.bin"
    save_array(path, arr)
    assert np.array_equal(load_array(path), arr)


def test_binary_rejects_foreign_file(tmp_path):
    path = tmp_path / "not_an_array.bin"
    path.write_bytes(b"hello world")
    with pytest.raises(ValueError, match="container"):
        load_array(path)


def test_motion_round_trip_both_formats(tmp_path):
    motion = Motion(np.random.default_rng(2).normal(size=(6, 2, 3)))
    for name in ("m.json", "m.bin"):
        save_motion(tmp_path / name, motion)
        back = load_motion(tmp_path / name)
        assert np.abs(back.positions - motion.positions).max() <= 1e-12


def test_anchor_round_trip_root3d(tmp_path):
    family = ControlFamily.root3d(tolerance=0.07)
    anchors = AnchorSet(
        family,
        (Anchor(3, np.array([0.25, -1.5, 3.0])), Anchor(11, np.array([1.0, 0.0, 0.125]))),
    )
    path = tmp_path / "anchors.json"
    save_anchors(path, anchors)
    back = load_anchors(path, tolerance=0.07)
    assert back.family == family
    assert [a.frame for a in back.anchors] == [3, 11]
    np.testing.assert_array_equal(back.targets, anchors.targets)


def test_anchor_round_trip_body_point(tmp_path):
    family = ControlFamily.body_point(4)
    anchors = AnchorSet(family, (Anchor(0, np.array([1.0, 2.0, 3.0])),))
    path = tmp_path / "anchors.json"
    save_anchors(path, anchors)
    back = load_anchors(path)
    assert back.family.variant == "body_point"
    assert back.family.joint == 4
    np.testing.assert_array_equal(back.targets, anchors.targets)


def test_codebook_loads_from_array_container(tmp_path):
    from anchorsynth.synthworld import make_codebook
    from anchorsynth.tokenflow import Codebook

    cb = make_codebook(12, 6, 0.3, seed=3)
    for name in ("cb.json", "cb.bin"):
        save_array(tmp_path / name, cb.embeddings)
        back = Codebook(load_array(tmp_path / name))
        assert np.array_equal(back.embeddings, cb.embeddings)
        assert np.array_equal(back.distances, cb.distances)


def test_kv_projection_matrices_load_from_container(tmp_path):
    from anchorsynth.attention import KvProjection

    rng = np.random.default_rng(4)
    mats = {
        "proj.bin": rng.normal(size=(8, 2)),
        "key.bin": rng.normal(size=(2, 8)),
        "value.bin": rng.normal(size=(2, 8)),
    }
    for name, mat in mats.items():
        save_array(tmp_path / name, mat)
    params = KvProjection(
        load_array(tmp_path / "proj.bin"),
        load_array(tmp_path / "key.bin"),
        load_array(tmp_path / "value.bin"),
    )
    assert params.rank == 2
    assert np.array_equal(params.proj, mats["proj.bin"])


def test_anchor_document_schema(tmp_path):
    import json

    family = ControlFamily.planar_root()
    anchors = AnchorSet(family, (Anchor(5, np.array([0.5, -0.5])),))
    path = tmp_path / "anchors.json"
    save_anchors(path, anchors)
    doc = json.loads(path.read_text())
    assert set(doc) == {"family", "anchors"}
    assert doc["family"] == "planar_root"
    assert doc["anchors"] == [{"frame": 5, "target": [0.5, -0.5]}]
