"""
Tests for icosphere generation, patching and barycentric resampling.
"""
import logging

import numpy as np
import pytest

from surfalign.errors import ArgumentError, BoundsError
from surfalign.geometry.fields import SurfaceField, SurfaceSeries
from surfalign.geometry.icosphere import (
    euler_characteristic,
    face_count,
    generate_icosphere,
    mesh_edges,
    read_mesh_text,
    vertex_count,
    write_mesh_text,
)
from surfalign.geometry.patching import build_patching, patch_size, patching_for
from surfalign.geometry.resample import barycentric_resample, locate, locate_many

logger = logging.getLogger(__name__)


# -------------------------------------------------------------------------------------------------
# Icosphere
# -------------------------------------------------------------------------------------------------

class TestIcosphere:

    @pytest.mark.parametrize("level", range(0, 7))
    def test_counts(self, level):
        mesh = generate_icosphere(level)
        assert mesh.num_vertices == 10 * 4 ** level + 2 == vertex_count(level)
        assert mesh.num_faces == 20 * 4 ** level == face_count(level)

    def test_level_six_counts(self):
        mesh = generate_icosphere(6)
        assert (mesh.num_vertices, mesh.num_faces) == (40962, 81920)
        assert generate_icosphere(3).num_faces == 1280

    def test_unit_norm_vertices(self):
        mesh = generate_icosphere(4)
        assert np.max(np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1.0)) < 1e-12

    def test_closed_two_manifold(self):
        mesh = generate_icosphere(3)
        edges = np.sort(np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]], mesh.faces[:, [2, 0]]]),
                        axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        assert np.all(counts == 2)
        assert euler_characteristic(mesh) == 2
        assert len(mesh_edges(mesh.faces)) == 30 * 4 ** 3

    def test_prefix_stable(self):
        for level in range(1, 5):
            coarse = generate_icosphere(level - 1)
            fine = generate_icosphere(level)
            assert np.array_equal(fine.vertices[:coarse.num_vertices], coarse.vertices)

    def test_outward_orientation(self):
        mesh = generate_icosphere(2)
        v = mesh.vertices[mesh.faces]
        normals = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        assert np.all(np.einsum('fi,fi->f', normals, v.mean(axis=1)) > 0)

    @pytest.mark.parametrize("level", [-1, 9])
    def test_level_out_of_range(self, level):
        with pytest.raises(BoundsError):
            generate_icosphere(level)

    def test_text_round_trip(self, tmp_path):
        mesh = generate_icosphere(2)
        path = write_mesh_text(mesh, str(tmp_path / "ico2.txt"))
        loaded = read_mesh_text(path)
        assert loaded.level == 2
        assert np.array_equal(loaded.vertices, mesh.vertices)
        assert np.array_equal(loaded.faces, mesh.faces)


# -------------------------------------------------------------------------------------------------
# Patching
# -------------------------------------------------------------------------------------------------

class TestPatching:

    def test_level_six_over_three(self):
        patching = patching_for(6, 3)
        assert patching.patches.shape == (1280, 45)
        assert np.array_equal(np.unique(patching.patches), np.arange(40962))

    def test_i4_i1(self):
        patching = patching_for(4, 1)
        assert patching.patches.shape == (80, 45)
        assert patch_size(3) == 45

    def test_patches_have_distinct_vertices(self):
        patching = patching_for(4, 1)
        for row in patching.patches:
            assert len(set(row.tolist())) == patching.patch_vertex_count

    def test_multiplicity(self):
        patching = patching_for(4, 1)
        coarse = generate_icosphere(1)
        mult = patching.multiplicity
        # coarse vertices sit in as many patches as they have incident faces
        incident = np.bincount(coarse.faces.ravel(), minlength=coarse.num_vertices)
        assert np.array_equal(mult[:coarse.num_vertices], incident)
        assert set(np.unique(incident)) <= {5, 6}
        rest = mult[coarse.num_vertices:]
        assert set(np.unique(rest)) == {1, 2}
        # every patch has 3 corners, 3 * (2^g - 1) edge vertices, the rest interior
        n = 2 ** 3
        assert np.all(patching.interior_mask.sum(axis=1) == patch_size(3) - 3 - 3 * (n - 1))

    def test_patch_vertices_lie_in_their_face(self):
        fine, coarse = generate_icosphere(4), generate_icosphere(1)
        patching = patching_for(4, 1)
        for i in (0, 17, 79):
            corners = coarse.vertices[coarse.faces[i]]
            points = fine.vertices[patching.patches[i]]
            weights = np.linalg.solve(corners.T, points.T).T
            assert np.all(weights > -1e-9)

    def test_inverted_levels(self):
        with pytest.raises(ArgumentError):
            build_patching(generate_icosphere(2), generate_icosphere(2))
        with pytest.raises(ArgumentError):
            build_patching(generate_icosphere(1), generate_icosphere(3))


# -------------------------------------------------------------------------------------------------
# Resampling
# -------------------------------------------------------------------------------------------------

class TestResample:

    def test_centroid_located(self):
        mesh = generate_icosphere(2)
        centroid = mesh.vertices[mesh.faces[10]].mean(axis=0)
        face, weights = locate(centroid / np.linalg.norm(centroid), mesh)
        assert face == 10
        assert np.allclose(weights, 1.0 / 3.0, atol=1e-9)

    def test_vertex_gives_unit_coordinate(self):
        mesh = generate_icosphere(2)
        face, weights = locate(mesh.vertices[5], mesh)
        assert 5 in mesh.faces[face]
        assert np.isclose(weights.max(), 1.0, atol=1e-9)

    def test_random_points_inside_their_faces(self, rng):
        mesh = generate_icosphere(2)
        points = rng.standard_normal((1000, 3))
        points /= np.linalg.norm(points, axis=1, keepdims=True)
        faces, weights = locate_many(points, mesh)
        corners = mesh.vertices[mesh.faces[faces]]
        solved = np.linalg.solve(np.transpose(corners, (0, 2, 1)), points[:, :, None])[:, :, 0]
        assert np.all(solved > -1e-9)
        assert np.allclose(weights.sum(axis=1), 1.0)

    def test_non_unit_point(self):
        with pytest.raises(ArgumentError):
            locate([1.0, 1.0, 0.0], generate_icosphere(1))

    def test_constant_field_preserved(self):
        src = SurfaceField(mesh_level=3, values=np.full(vertex_count(3), 2.5))
        out = barycentric_resample(src, generate_icosphere(4))
        assert np.allclose(out.values, 2.5, atol=1e-6)

    def test_same_mesh_identity(self, rng):
        values = rng.standard_normal(vertex_count(3))
        out = barycentric_resample(SurfaceField(mesh_level=3, values=values), generate_icosphere(3))
        assert np.allclose(out.values[:, 0], values, atol=1e-5)

    def test_linear_field_upsampled(self):
        src_mesh = generate_icosphere(5)
        out = barycentric_resample(SurfaceField(mesh_level=5, values=src_mesh.vertices[:, 0]),
                                   generate_icosphere(6))
        assert np.max(np.abs(out.values[:, 0] - generate_icosphere(6).vertices[:, 0])) < 5e-3


class TestFields:

    def test_wrong_vertex_count(self):
        with pytest.raises(ArgumentError):
            SurfaceField(mesh_level=2, values=np.zeros(10))

    def test_series_frames(self):
        series = SurfaceSeries(mesh_level=1, values=np.tile(np.arange(8.0), (42, 1)))
        assert series.num_frames == 8
        assert np.array_equal(series.frames(2, 3)[0], [2.0, 3.0, 4.0])
        with pytest.raises(BoundsError):
            series.frames(6, 3)
