"""Loading, validation and serialization round-trips."""

import json
import shutil
import struct

import numpy as np
import pytest
from PIL import Image

from nvsprompt3d import scene_io
from nvsprompt3d.errors import (
    DimensionMismatch,
    IoFailure,
    MalformedHeader,
    MissingFile,
    SchemaViolation,
    UnsupportedPlyVariant,
)


def ascii_ply(tmp_path, name="one.ply"):
    path = tmp_path / name
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 1\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
        "0 0 0 255 0 0\n")
    return path


class TestPly:
    def test_single_point_ascii(self, tmp_path):
        cloud = scene_io.load_ply(ascii_ply(tmp_path))
        np.testing.assert_array_equal(cloud.positions, [[0.0, 0.0, 0.0]])
        np.testing.assert_array_equal(cloud.colors, [[1.0, 0.0, 0.0]])

    def test_binary_matches_ascii(self, tmp_path):
        ascii_path = tmp_path / "a.ply"
        ascii_path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 2\n"
            "property double x\nproperty double y\nproperty double z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            "end_header\n"
            "0.5 -1.25 3 255 0 0\n"
            "2 0.75 -4.5 0 128 255\n")
        header = (
            "ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
            "property double x\nproperty double y\nproperty double z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            "end_header\n")
        body = (struct.pack("<dddBBB", 0.5, -1.25, 3.0, 255, 0, 0)
                + struct.pack("<dddBBB", 2.0, 0.75, -4.5, 0, 128, 255))
        bin_path = tmp_path / "b.ply"
        bin_path.write_bytes(header.encode() + body)

        a = scene_io.load_ply(ascii_path)
        b = scene_io.load_ply(bin_path)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.colors, b.colors)

    def test_float32_positions_supported(self, tmp_path):
        path = tmp_path / "f32.ply"
        header = (
            "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
            "property float x\nproperty float y\nproperty float z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            "end_header\n")
        path.write_bytes(header.encode()
                         + struct.pack("<fffBBB", 1.5, 2.0, -0.25, 10, 20, 30))
        cloud = scene_io.load_ply(path)
        np.testing.assert_allclose(cloud.positions, [[1.5, 2.0, -0.25]])

    def test_extra_scalar_properties_ignored(self, tmp_path):
        path = tmp_path / "extra.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property double x\nproperty double y\nproperty double z\n"
            "property float confidence\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            "end_header\n"
            "1 2 3 0.5 0 255 0\n")
        cloud = scene_io.load_ply(path)
        np.testing.assert_array_equal(cloud.positions, [[1.0, 2.0, 3.0]])
        np.testing.assert_array_equal(cloud.colors, [[0.0, 1.0, 0.0]])

    def test_missing_red_property(self, tmp_path):
        path = tmp_path / "nored.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property double x\nproperty double y\nproperty double z\n"
            "property uchar green\nproperty uchar blue\n"
            "end_header\n"
            "0 0 0 0 0\n")
        with pytest.raises(UnsupportedPlyVariant):
            scene_io.load_ply(path)

    def test_big_endian_rejected(self, tmp_path):
        path = tmp_path / "be.ply"
        path.write_text(
            "ply\nformat binary_big_endian 1.0\nelement vertex 1\n"
            "property double x\nproperty double y\nproperty double z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            "end_header\n")
        with pytest.raises(UnsupportedPlyVariant):
            scene_io.load_ply(path)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "junk.ply"
        path.write_bytes(b"not a ply at all")
        with pytest.raises(MalformedHeader):
            scene_io.load_ply(path)

    def test_roundtrip_within_color_quantization(self, tmp_path):
        rng = np.random.default_rng(0)
        cloud = scene_io.PointCloud(positions=rng.normal(size=(40, 3)),
                                    colors=rng.uniform(size=(40, 3)))
        path = tmp_path / "rt.ply"
        scene_io.write_ply(cloud, path)
        loaded = scene_io.load_ply(path)
        np.testing.assert_array_equal(loaded.positions, cloud.positions)
        assert np.abs(loaded.colors - cloud.colors).max() <= 0.5 / 255.0


class TestImages:
    def test_half_gray_quantizes_to_128(self, tmp_path):
        path = tmp_path / "gray.png"
        scene_io.write_image(np.full((4, 5, 3), 0.5), path)
        raw = np.asarray(Image.open(path))
        assert (raw == 128).all()

    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.uniform(size=(6, 7, 3))
        path = tmp_path / "rt.png"
        scene_io.write_image(img, path)
        back = scene_io.read_image(path)
        assert np.abs(back - img).max() <= 0.5 / 255.0
        # writing the decoded image again is lossless
        scene_io.write_image(back, path)
        np.testing.assert_array_equal(scene_io.read_image(path), back)

    def test_nonfinite_rejected(self, tmp_path):
        img = np.zeros((4, 4, 3))
        img[0, 0, 0] = np.nan
        with pytest.raises(IoFailure):
            scene_io.write_image(img, tmp_path / "bad.png")


class TestFeatures:
    def test_bitwise_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        vectors = rng.normal(size=(5, 64))
        path = tmp_path / "f.feat"
        scene_io.write_features(vectors, path)
        back = scene_io.read_features(path)
        assert back.dtype == np.float64
        assert np.array_equal(back, vectors)
        assert back.tobytes() == vectors.tobytes()

    def test_nonfinite_rejected(self, tmp_path):
        with pytest.raises(IoFailure):
            scene_io.write_features(np.array([[np.inf, 0.0]]), tmp_path / "f.feat")

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "f.feat"
        scene_io.write_features(np.ones((2, 3)), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(MalformedHeader):
            scene_io.read_features(path)


class TestDepth:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        values = rng.uniform(0, 5, size=(6, 9)).astype(np.float32)
        values[0, 0] = 0.0
        depth = scene_io.DepthMap(values=values, pose_id=4)
        path = tmp_path / "d.dmap"
        scene_io.write_depth(depth, path)
        back = scene_io.read_depth(path, pose_id=4)
        np.testing.assert_array_equal(back.values, values)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dmap"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(MalformedHeader):
            scene_io.read_depth(path)


class TestManifest:
    def test_synthetic_scene_loads(self, scene_dir):
        scene = scene_io.load_scene(scene_dir / "manifest.json")
        assert len(scene.masks) == 3
        assert len(scene.poses) == 4
        assert scene.intrinsics.width > 0
        assert set(scene.depths) == {p.pose_id for p in scene.poses}
        assert scene.queries is not None and len(scene.queries.labels) == 3

    def test_loading_is_pure(self, scene_dir):
        a = scene_io.load_scene(scene_dir / "manifest.json")
        b = scene_io.load_scene(scene_dir / "manifest.json")
        assert np.array_equal(a.cloud.positions, b.cloud.positions)
        assert np.array_equal(a.cloud.colors, b.cloud.colors)
        for pa, pb in zip(a.poses, b.poses):
            assert np.array_equal(pa.rotation, pb.rotation)
            assert np.array_equal(pa.translation, pb.translation)

    def test_mask_index_out_of_range(self, scene_dir, tmp_path):
        shutil.copytree(scene_dir, tmp_path / "scene")
        masks = json.loads((tmp_path / "scene" / "masks.json").read_text())
        masks[0]["indices"].append(10_000_000)
        (tmp_path / "scene" / "masks.json").write_text(json.dumps(masks))
        with pytest.raises(DimensionMismatch) as err:
            scene_io.load_scene(tmp_path / "scene" / "manifest.json")
        assert "masks[0]" in str(err.value)

    def test_zero_delta_rejected(self, scene_dir, tmp_path):
        shutil.copytree(scene_dir, tmp_path / "scene")
        manifest = json.loads((tmp_path / "scene" / "manifest.json").read_text())
        manifest["delta"] = 0
        (tmp_path / "scene" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(SchemaViolation) as err:
            scene_io.load_scene(tmp_path / "scene" / "manifest.json")
        assert "delta" in str(err.value)

    def test_missing_depth_named(self, scene_dir, tmp_path):
        shutil.copytree(scene_dir, tmp_path / "scene")
        (tmp_path / "scene" / "depth" / "0.dmap").unlink()
        with pytest.raises(MissingFile) as err:
            scene_io.load_scene(tmp_path / "scene" / "manifest.json")
        assert "depth_dir[0]" in str(err.value)

    def test_bad_rotation_named(self, scene_dir, tmp_path):
        shutil.copytree(scene_dir, tmp_path / "scene")
        poses = json.loads((tmp_path / "scene" / "poses.json").read_text())
        poses[1]["camera_to_world"][0] = 5.0
        (tmp_path / "scene" / "poses.json").write_text(json.dumps(poses))
        with pytest.raises(SchemaViolation) as err:
            scene_io.load_scene(tmp_path / "scene" / "manifest.json")
        assert "poses[1]" in str(err.value)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MissingFile):
            scene_io.load_scene(tmp_path / "nope.json")

    def test_unknown_prompt_mode(self, scene_dir, tmp_path):
        shutil.copytree(scene_dir, tmp_path / "scene")
        manifest = json.loads((tmp_path / "scene" / "manifest.json").read_text())
        manifest["prompt_mode"] = "sparkle"
        (tmp_path / "scene" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(SchemaViolation):
            scene_io.load_scene(tmp_path / "scene" / "manifest.json")


class TestQueries:
    def test_precomputed_feature_queries(self, tmp_path):
        rng = np.random.default_rng(4)
        feats = rng.normal(size=(3, 64))
        scene_io.write_features(feats, tmp_path / "q.feat")
        (tmp_path / "queries.json").write_text(json.dumps(
            {"labels": ["a", "b", "c"], "features": "q.feat"}))
        qs = scene_io.load_queries(tmp_path / "queries.json")
        assert qs.labels == ("a", "b", "c")
        assert np.array_equal(qs.features, feats)

    def test_feature_label_count_mismatch(self, tmp_path):
        scene_io.write_features(np.ones((2, 8)), tmp_path / "q.feat")
        (tmp_path / "queries.json").write_text(json.dumps(
            {"labels": ["a", "b", "c"], "features": "q.feat"}))
        with pytest.raises(DimensionMismatch):
            scene_io.load_queries(tmp_path / "queries.json")

    def test_image_queries_must_exist(self, tmp_path):
        (tmp_path / "queries.json").write_text(json.dumps(
            {"labels": ["a"], "images": ["missing.png"]}))
        with pytest.raises(MissingFile):
            scene_io.load_queries(tmp_path / "queries.json")


class TestTypeInvariants:
    def test_colors_out_of_range(self):
        with pytest.raises(ValueError):
            scene_io.PointCloud(positions=np.zeros((1, 3)),
                                colors=np.array([[1.5, 0.0, 0.0]]))

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            scene_io.InstanceMask(instance_id=0, bits=np.zeros(5, dtype=bool))

    def test_reflection_rejected(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            scene_io.CameraPose(rotation=r, translation=np.zeros(3))

    def test_principal_point_inside(self):
        with pytest.raises(ValueError):
            scene_io.Intrinsics(fx=10, fy=10, cx=64.0, cy=10.0, width=64, height=48)

    def test_loaded_arrays_immutable(self, scene_dir):
        scene = scene_io.load_scene(scene_dir / "manifest.json")
        with pytest.raises(ValueError):
            scene.cloud.positions[0, 0] = 1.0
