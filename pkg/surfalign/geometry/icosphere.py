"""
Regularly subdivided icosahedral sphere meshes.

Level k is built from level k-1 by splitting every face into four and
projecting the new edge midpoints onto the unit sphere. Parent vertices keep
their indices and the midpoints follow in sorted-parent-edge order, so level
k-1 is always a vertex prefix of level k.
"""
import os
import sys
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Add the project root to the Python path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..')))
from config import MAX_ICO_LEVEL
from surfalign.errors import ArgumentError, BoundsError

logger = logging.getLogger(__name__)

_PHI = (1.0 + np.sqrt(5.0)) / 2.0

_BASE_VERTICES = np.array([
    (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
    (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
    (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
], dtype=np.float64)

# counter-clockwise seen from outside
_BASE_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
], dtype=np.int64)


def vertex_count(level):
    return 10 * 4 ** level + 2


def face_count(level):
    return 20 * 4 ** level


@dataclass(frozen=True, eq=False)
class IcoSphere:
    """
    Unit-sphere triangulation at subdivision level ``level``.

    Instances compare by identity; generate_icosphere caches one per level so
    derived lookups (edge tables, KD-trees) can be cached per mesh.
    """
    level: int
    vertices: np.ndarray
    faces: np.ndarray

    @property
    def num_vertices(self):
        return int(self.vertices.shape[0])

    @property
    def num_faces(self):
        return int(self.faces.shape[0])

    def __repr__(self):
        return f"IcoSphere(level={self.level}, V={self.num_vertices}, F={self.num_faces})"


def mesh_edges(faces):
    """
    Unique undirected edges of a triangle list.

    Args:
        faces (numpy.ndarray): F x 3 vertex indices

    Returns:
        numpy.ndarray: E x 2 edges (smaller index first), sorted lexicographically
    """
    pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=0)
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def _subdivide(vertices, faces):
    num_vertices = vertices.shape[0]
    edges = mesh_edges(faces)
    midpoints = vertices[edges[:, 0]] + vertices[edges[:, 1]]
    midpoints /= np.linalg.norm(midpoints, axis=1, keepdims=True)

    lookup = EdgeLookup(edges, num_vertices)
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    ab, bc, ca = lookup.midpoint(a, b), lookup.midpoint(b, c), lookup.midpoint(c, a)

    children = np.stack([
        np.stack([a, ab, ca], axis=1),
        np.stack([ab, b, bc], axis=1),
        np.stack([ca, bc, c], axis=1),
        np.stack([ab, bc, ca], axis=1),
    ], axis=1)
    new_faces = children.reshape(-1, 3)
    return np.concatenate([vertices, midpoints], axis=0), new_faces


class EdgeLookup:
    """
    Maps edges of a level-k mesh to the index of their midpoint at level k+1.

    The midpoint of the edge with rank r in sorted order gets index V_k + r.
    """

    def __init__(self, edges, num_vertices):
        self.num_vertices = num_vertices
        self.keys = edges[:, 0].astype(np.int64) * num_vertices + edges[:, 1]

    def midpoint(self, u, v):
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        keys = np.minimum(u, v) * self.num_vertices + np.maximum(u, v)
        rank = np.searchsorted(self.keys, keys)
        if np.any(rank >= self.keys.size) or np.any(self.keys[np.minimum(rank, self.keys.size - 1)] != keys):
            raise ArgumentError("edge is not part of the mesh")
        return self.num_vertices + rank


@lru_cache(maxsize=None)
def generate_icosphere(level):
    """
    Build the icosphere of the given subdivision level.

    Args:
        level (int): subdivision level, 0 to 8

    Returns:
        IcoSphere: mesh with 10*4^level+2 vertices and 20*4^level faces
    """
    if isinstance(level, bool) or not isinstance(level, (int, np.integer)):
        raise ArgumentError(f"level must be an integer, got {level!r}")
    level = int(level)
    if not 0 <= level <= MAX_ICO_LEVEL:
        raise BoundsError(f"icosphere level {level} outside 0..{MAX_ICO_LEVEL}")

    if level == 0:
        vertices = _BASE_VERTICES / np.linalg.norm(_BASE_VERTICES, axis=1, keepdims=True)
        faces = _BASE_FACES.copy()
    else:
        parent = generate_icosphere(level - 1)
        vertices, faces = _subdivide(parent.vertices, parent.faces)
        logger.debug(f"Subdivided level {level - 1} -> {level}: {len(vertices)} vertices")

    vertices.setflags(write=False)
    faces.setflags(write=False)
    return IcoSphere(level=level, vertices=vertices, faces=faces)


@lru_cache(maxsize=None)
def edge_lookup(level):
    """Midpoint lookup for the edges of the level-``level`` mesh."""
    mesh = generate_icosphere(level)
    return EdgeLookup(mesh_edges(mesh.faces), mesh.num_vertices)


def euler_characteristic(mesh):
    return mesh.num_vertices - len(mesh_edges(mesh.faces)) + mesh.num_faces


def write_mesh_text(mesh, path):
    """
    Export a mesh in the plain-text ICOSPHERE v1 format.

    Args:
        mesh (IcoSphere): mesh to export
        path (str): output file

    Returns:
        str: path written
    """
    with open(path, 'w') as f:
        f.write(f"ICOSPHERE v1 level={mesh.level} V={mesh.num_vertices} F={mesh.num_faces}\n")
        np.savetxt(f, mesh.vertices, fmt="%.17g")
        np.savetxt(f, mesh.faces, fmt="%d")
    logger.info(f"Saved level {mesh.level} icosphere to {path}")
    return path


def read_mesh_text(path):
    """
    Read a mesh written by write_mesh_text.

    Returns:
        IcoSphere: the stored mesh (not interned in the generate_icosphere cache)
    """
    with open(path, 'r') as f:
        lines = f.read().splitlines()
    header = lines[0].split() if lines else []
    if len(header) != 5 or header[:2] != ["ICOSPHERE", "v1"]:
        raise ArgumentError(f"{path} is not an ICOSPHERE v1 file")
    fields = dict(item.split("=", 1) for item in header[2:])
    level, nv, nf = int(fields["level"]), int(fields["V"]), int(fields["F"])
    body = lines[1:]
    if len(body) != nv + nf:
        raise ArgumentError(f"{path}: counts in header do not match the body")
    vertices = np.array([line.split() for line in body[:nv]], dtype=np.float64).reshape(nv, -1)
    faces = np.array([line.split() for line in body[nv:]], dtype=np.int64).reshape(nf, -1)
    if vertices.shape != (nv, 3) or faces.shape != (nf, 3):
        raise ArgumentError(f"{path}: counts in header do not match the body")
    logger.info(f"Loaded level {level} icosphere from {path}")
    return IcoSphere(level=level, vertices=vertices, faces=faces)
