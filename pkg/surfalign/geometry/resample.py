"""
Point location and barycentric resampling between icospheres.

A point belongs to a face when the ray from the origin through it crosses the
face (gnomonic containment). Candidate faces come from a KD-tree over face
centroids; points the candidates miss fall back to a scan over all faces.
"""
import logging
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

from surfalign.errors import ArgumentError
from surfalign.geometry.fields import SurfaceField
from surfalign.geometry.icosphere import generate_icosphere

logger = logging.getLogger(__name__)

_CONTAIN_TOL = 1e-12
_UNIT_TOL = 1e-9
_CANDIDATES = 12


@lru_cache(maxsize=None)
def _face_geometry(mesh):
    corners = mesh.vertices[mesh.faces]  # F x 3 x 3
    # columns are the corners, so solve(M, p) gives the corner weights
    inverse = np.linalg.inv(np.transpose(corners, (0, 2, 1)))
    centroids = corners.mean(axis=1)
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    return inverse, cKDTree(centroids)


def _weights(inverse, face_ids, points):
    return np.einsum('qkij,qj->qki', inverse[face_ids], points)


def _pick(face_ids, weights):
    """Lowest containing face id per row; -1 where no candidate contains the point."""
    inside = np.all(weights >= -_CONTAIN_TOL, axis=-1) & (weights.sum(axis=-1) > 0)
    masked = np.where(inside, face_ids, np.iinfo(np.int64).max)
    column = np.argmin(masked, axis=1)
    rows = np.arange(face_ids.shape[0])
    chosen = face_ids[rows, column]
    chosen = np.where(inside[rows, column], chosen, -1)
    return chosen, weights[rows, column]


def locate_many(points, mesh):
    """
    Locate many unit vectors on a mesh.

    Args:
        points (numpy.ndarray): Q x 3 unit vectors
        mesh (IcoSphere): target mesh

    Returns:
        tuple: (face ids Q, barycentric coordinates Q x 3)
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    norms = np.linalg.norm(points, axis=1)
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise ArgumentError("points must be unit vectors (|p| = 1 +/- 1e-9)")

    inverse, tree = _face_geometry(mesh)
    k = min(_CANDIDATES, mesh.num_faces)
    _, candidates = tree.query(points, k=k)
    candidates = np.asarray(candidates, dtype=np.int64).reshape(points.shape[0], k)
    faces, weights = _pick(candidates, _weights(inverse, candidates, points))

    missing = np.flatnonzero(faces < 0)
    if missing.size:
        logger.debug(f"{missing.size} points fell back to a full face scan")
        all_faces = np.broadcast_to(np.arange(mesh.num_faces), (missing.size, mesh.num_faces))
        found, found_weights = _pick(all_faces, _weights(inverse, all_faces, points[missing]))
        faces[missing] = found
        weights[missing] = found_weights

    weights = np.clip(weights, 0.0, None)
    weights /= weights.sum(axis=1, keepdims=True)
    return faces, weights


def locate(point, mesh):
    """
    Find the face containing a unit vector.

    Args:
        point (array-like): unit 3-vector
        mesh (IcoSphere): target mesh

    Returns:
        tuple: (face id, barycentric coordinates as a length-3 array)
    """
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (3,):
        raise ArgumentError(f"point must be a 3-vector, got shape {point.shape}")
    faces, weights = locate_many(point[None, :], mesh)
    return int(faces[0]), weights[0]


def barycentric_resample(src, dst_mesh):
    """
    Interpolate a field onto another icosphere.

    Args:
        src (SurfaceField): field on its own icosphere level
        dst_mesh (IcoSphere): destination mesh

    Returns:
        SurfaceField: field on dst_mesh (same channel count)
    """
    src_mesh = generate_icosphere(src.mesh_level)
    faces, weights = locate_many(dst_mesh.vertices, src_mesh)
    corners = src_mesh.faces[faces]  # Vd x 3
    values = src.values.astype(np.float64)
    out = np.einsum('vk,vkc->vc', weights, values[corners])
    return SurfaceField(mesh_level=dst_mesh.level, values=out.astype(np.float32),
                        metadata=dict(src.metadata))
