import json

import numpy as np
import pytest

from robosynth.data import data_path
from robosynth.scene import (
    DanglingMeshError,
    DuplicateNameError,
    SceneFileMissing,
    SceneSchemaError,
    initial_snapshot,
    load_scene,
    save_scene,
    scene_to_dict,
)


def minimal_doc():
    return {
        "units": "m",
        "meshes": {"b": {"box": [0.2, 0.2, 0.2]}},
        "objects": [
            {"name": "crate", "mesh": "b", "class": "prop", "albedo": [1, 0, 0],
             "pose": {"pos": [0, 0, 0.1], "quat": [1, 0, 0, 0]}, "grabbable": True},
        ],
        "robot": {"file": data_path("robots", "trivial.json")},
        "cameras": [
            {"name": "main", "fov_deg": 90, "width": 64, "height": 48,
             "placement": {"static": {"pos": [0, -1, 0.5], "quat": [1, 0, 0, 0]}}},
        ],
        "lights": {"directional": [{"direction": [0, 0, -1], "intensity": 1.0}], "ambient": 0.2},
        "classes": {"prop": 1},
    }


def write_scene(tmp_path, doc, name="scene.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_load_minimal_scene(tmp_path):
    scene = load_scene(write_scene(tmp_path, minimal_doc()))
    assert len(scene.objects) == 1
    assert scene.objects[0].instance_id == 1
    assert scene.objects[0].class_id == 1
    assert scene.objects[0].grabbable
    assert scene.camera_names() == ["main"]
    assert len(scene.lights) == 1


def test_missing_file():
    with pytest.raises(SceneFileMissing):
        load_scene("/nope/missing.json")


def test_duplicate_object_name(tmp_path):
    doc = minimal_doc()
    doc["objects"].append(dict(doc["objects"][0]))
    with pytest.raises(DuplicateNameError, match="crate"):
        load_scene(write_scene(tmp_path, doc))


def test_dangling_mesh_reference(tmp_path):
    doc = minimal_doc()
    doc["objects"][0]["mesh"] = "ghost"
    with pytest.raises(DanglingMeshError, match="ghost"):
        load_scene(write_scene(tmp_path, doc))


def test_unknown_units_rejected(tmp_path):
    doc = minimal_doc()
    doc["units"] = "cm"
    with pytest.raises(SceneSchemaError, match="units"):
        load_scene(write_scene(tmp_path, doc))


def test_sparse_class_ids_rejected(tmp_path):
    doc = minimal_doc()
    doc["classes"] = {"prop": 2}
    with pytest.raises(SceneSchemaError, match="dense"):
        load_scene(write_scene(tmp_path, doc))


def test_class_map_derived_when_absent(tmp_path):
    doc = minimal_doc()
    del doc["classes"]
    scene = load_scene(write_scene(tmp_path, doc))
    assert scene.class_map["prop"] == 1


def test_scale_baked_into_mesh(tmp_path):
    doc = minimal_doc()
    doc["objects"][0]["scale"] = 2.0
    scene = load_scene(write_scene(tmp_path, doc))
    bb = scene.objects[0].mesh.local_aabb()
    assert np.allclose(bb.max, [0.2, 0.2, 0.2])


def test_roundtrip_grasp_lab(tmp_path, grasp_scene):
    out = tmp_path / "resaved.json"
    save_scene(grasp_scene, str(out))
    again = load_scene(str(out))
    assert scene_to_dict(grasp_scene) == scene_to_dict(again)


def test_grasp_lab_contents(grasp_scene):
    assert {o.name for o in grasp_scene.objects} == {"floor", "shelf", "box"}
    assert grasp_scene.object("box").grabbable
    assert grasp_scene.robot_instance_id == 4
    assert grasp_scene.class_map["robot"] == 4
    names = grasp_scene.camera_names()
    assert "head_cam" in names and "external" in names


def test_initial_snapshot_covers_scene(grasp_scene):
    snap = initial_snapshot(grasp_scene)
    assert snap.covers(grasp_scene)
    assert snap.frame_id == 0
    # attached head camera sits above the floor near the head joint
    head_cam = snap.camera_poses["head_cam"]
    assert head_cam.pos[2] > 1.5


def test_stereo_block_expands_to_pair(tmp_path):
    doc = minimal_doc()
    doc["cameras"][0]["stereo"] = {"baseline_m": 0.1}
    scene = load_scene(write_scene(tmp_path, doc))
    assert scene.camera_names() == ["main_L", "main_R"]
    lp = scene.camera("main_L").placement.static_pose
    rp = scene.camera("main_R").placement.static_pose
    assert np.allclose(np.linalg.norm(rp.pos - lp.pos), 0.1)
