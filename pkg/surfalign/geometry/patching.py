"""
Tokenization grid: fine-mesh vertex sets under the faces of a coarse mesh.

Every coarse face (a, b, c) covers a triangular barycentric lattice of fine
vertices with n = 2^g points per side. Lattice point (i, j), 0 <= j <= i <= n,
sits at ((n-i)a + (i-j)b + jc)/n; patches list their vertices row-major in
that lattice, starting from the face's first corner. Vertices on coarse edges
and corners are shared between neighbouring patches.
"""
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from surfalign.errors import ArgumentError
from surfalign.geometry.icosphere import edge_lookup, generate_icosphere

logger = logging.getLogger(__name__)


def patch_size(gap):
    n = 2 ** gap
    return (n + 1) * (n + 2) // 2


@dataclass(frozen=True, eq=False)
class PatchIndex:
    fine_level: int
    coarse_level: int
    patches: np.ndarray  # N x p fine vertex ids

    @property
    def gap(self):
        return self.fine_level - self.coarse_level

    @property
    def num_patches(self):
        return int(self.patches.shape[0])

    @property
    def patch_vertex_count(self):
        return int(self.patches.shape[1])

    @property
    def num_fine_vertices(self):
        return 10 * 4 ** self.fine_level + 2

    @cached_property
    def multiplicity(self):
        """Number of patches containing each fine vertex."""
        return np.bincount(self.patches.ravel(), minlength=self.num_fine_vertices)

    @cached_property
    def interior_mask(self):
        """N x p mask of patch entries that belong to no other patch."""
        return self.multiplicity[self.patches] == 1


def _refine_lattice(lattice, level):
    """Double the lattice resolution using midpoints of the level-``level`` mesh."""
    lookup = edge_lookup(level)
    num, size = lattice.shape[0], lattice.shape[1]
    n = size - 1
    out = np.full((num, 2 * n + 1, 2 * n + 1), -1, dtype=np.int64)
    out[:, ::2, ::2] = lattice

    rows, cols = np.tril_indices(n + 1)
    down = rows < n
    i, j = rows[down], cols[down]
    out[:, 2 * i + 1, 2 * j] = lookup.midpoint(lattice[:, i, j], lattice[:, i + 1, j])
    out[:, 2 * i + 1, 2 * j + 1] = lookup.midpoint(lattice[:, i, j], lattice[:, i + 1, j + 1])
    across = cols < rows
    i, j = rows[across], cols[across]
    out[:, 2 * i, 2 * j + 1] = lookup.midpoint(lattice[:, i, j], lattice[:, i, j + 1])
    return out


def build_patching(fine, coarse):
    """
    Decompose the fine mesh into one vertex patch per coarse face.

    Args:
        fine (IcoSphere): fine mesh
        coarse (IcoSphere): coarse mesh, strictly lower level

    Returns:
        PatchIndex: 20*4^coarse.level patches of (2^g+1)(2^g+2)/2 vertices each
    """
    if fine.level <= coarse.level:
        raise ArgumentError(
            f"fine level {fine.level} must be greater than coarse level {coarse.level}")

    faces = np.asarray(coarse.faces, dtype=np.int64)
    lattice = np.full((faces.shape[0], 2, 2), -1, dtype=np.int64)
    lattice[:, 0, 0] = faces[:, 0]
    lattice[:, 1, 0] = faces[:, 1]
    lattice[:, 1, 1] = faces[:, 2]

    for level in range(coarse.level, fine.level):
        lattice = _refine_lattice(lattice, level)

    rows, cols = np.tril_indices(lattice.shape[1])
    patches = lattice[:, rows, cols]
    patches.setflags(write=False)
    logger.info(
        f"Built patching I{fine.level}/I{coarse.level}: {patches.shape[0]} patches x {patches.shape[1]} vertices")
    return PatchIndex(fine_level=fine.level, coarse_level=coarse.level, patches=patches)


@lru_cache(maxsize=None)
def patching_for(fine_level, coarse_level):
    """Cached patching between two generated icosphere levels."""
    return build_patching(generate_icosphere(fine_level), generate_icosphere(coarse_level))
