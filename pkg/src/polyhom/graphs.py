"""Grain-level graphs from voxel RVEs.

Node features (16 per grain, in column order):
    0-3   orientation quaternion (q0, q1, q2, q3)
    4     normalized volume V_grain / V_cell
    5     periodicity flag P in {0, 1}
    6-8   centroid (x, y, z) in normalized cell coordinates
    9-14  second moments I_xx, I_yy, I_zz, I_xy, I_yz, I_zx about the
          centroid (coordinate second moments sum x'_i x'_j / V, cell
          length normalized)
    15    orientation index into the reduced orientation sample,
          normalized to [0, 1]

Edges connect grains sharing at least one voxel face, with periodic wrap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import rotations

__all__ = ["MicrostructureGraph", "build_adjacency", "grain_moments",
           "grain_periodicity", "orientation_index", "build_graph",
           "save_graph", "load_graph"]

N_FEATURES = 16
GRAPH_FORMAT_VERSION = 1


@dataclass
class MicrostructureGraph:
    """Feature matrix (G, 16) plus an undirected, deduplicated edge list."""

    features: np.ndarray  # (G, 16) float
    edges: np.ndarray     # (E, 2) int, i < j, no self-loops

    @property
    def n_nodes(self):
        return self.features.shape[0]


def build_adjacency(grain_ids):
    """Undirected edge list of face-neighboring grains (periodic wrap).

    Returns an (E, 2) int array with i < j, sorted lexicographically.
    """
    ids = np.asarray(grain_ids)
    pairs = set()
    for ax in range(3):
        nb = np.roll(ids, -1, axis=ax)
        a, b = ids.ravel(), nb.ravel()
        mask = a != b
        lo = np.minimum(a[mask], b[mask])
        hi = np.maximum(a[mask], b[mask])
        pairs.update(zip(lo.tolist(), hi.tolist()))
    if not pairs:
        return np.empty((0, 2), dtype=int)
    return np.array(sorted(pairs), dtype=int)


def _grain_coords(grain_ids, g):
    idx = np.argwhere(np.asarray(grain_ids) == g)
    # voxel centers in normalized cell coordinates
    return (idx + 0.5) / np.array(grain_ids.shape)


def grain_moments(grain_ids, g):
    """Periodic-aware centroid and second moments of one grain.

    The grain's voxel centers are unwrapped by the minimum image relative to
    the grain's first voxel, averaged for the centroid (wrapped back into
    [0, 1)), and the second moments are sum x'_i x'_j / V about the centroid
    in cell-length units.  Returns ``(centroid (3,), moments (3, 3))``.
    """
    x = _grain_coords(grain_ids, g)
    if x.shape[0] == 0:
        raise ValueError(f"grain {g} is empty")
    d = x - x[0]
    d -= np.round(d)  # minimum image relative to the reference voxel
    centroid = (x[0] + d.mean(axis=0)) % 1.0
    dc = d - d.mean(axis=0)
    moments = dc.T @ dc / x.shape[0]
    return centroid, moments


def grain_periodicity(grain_ids, g):
    """1 when the grain wraps through the periodic boundary, else 0.

    A grain is flagged when its voxel set touches a pair of opposite faces
    with connectivity through the wrap: connected components are found
    without wrap, then merged across periodic faces; the flag is set when
    the wrap merge joins components or a single component spans opposite
    faces through matching boundary voxels.
    """
    ids = np.asarray(grain_ids)
    mask = ids == g
    labels, n = ndimage.label(mask)
    if n == 0:
        raise ValueError(f"grain {g} is empty")
    touches_wrap = False
    for ax in range(3):
        lo = np.take(labels, 0, axis=ax)
        hi = np.take(labels, -1, axis=ax)
        both = (lo > 0) & (hi > 0)
        if both.any():
            touches_wrap = True
    if not touches_wrap:
        return 0
    if n > 1:
        # multiple pieces that only join through the wrap
        return 1
    # single component: periodic iff any voxel column wraps onto itself
    for ax in range(3):
        lo = np.take(mask, 0, axis=ax)
        hi = np.take(mask, -1, axis=ax)
        if (lo & hi).any():
            return 1
    return 0


def orientation_index(q_grain, sample):
    """Index of the geodesically nearest sample orientation (lowest-index
    tie-break via argmin)."""
    sample = np.atleast_2d(np.asarray(sample, dtype=float))
    if sample.shape[0] == 0:
        raise ValueError("empty orientation sample")
    d = rotations.geodesic_distance(np.asarray(q_grain, dtype=float)[None],
                                    sample)
    return int(np.argmin(d))


def build_graph(rve, sample):
    """Microstructure graph of an RVE against a reduced orientation sample.

    The orientation-index feature is normalized by ``len(sample) - 1`` so
    its range is [0, 1] regardless of the sample size.
    """
    sample = np.atleast_2d(np.asarray(sample, dtype=float))
    G = rve.n_grains
    vol = rve.volume_fractions()
    denom = max(sample.shape[0] - 1, 1)
    X = np.zeros((G, N_FEATURES))
    for g in range(G):
        centroid, M = grain_moments(rve.grain_ids, g)
        X[g, 0:4] = rve.orientations[g]
        X[g, 4] = vol[g]
        X[g, 5] = grain_periodicity(rve.grain_ids, g)
        X[g, 6:9] = centroid
        X[g, 9:15] = [M[0, 0], M[1, 1], M[2, 2], M[0, 1], M[1, 2], M[2, 0]]
        X[g, 15] = orientation_index(rve.orientations[g], sample) / denom
    edges = build_adjacency(rve.grain_ids)
    return MicrostructureGraph(features=X, edges=edges)


def save_graph(graph, path):
    np.savez_compressed(path, version=GRAPH_FORMAT_VERSION,
                        features=graph.features, edges=graph.edges)


def load_graph(path):
    with np.load(path) as d:
        if int(d["version"]) != GRAPH_FORMAT_VERSION:
            raise ValueError(f"unsupported graph format version {d['version']}")
        return MicrostructureGraph(features=d["features"],
                                   edges=d["edges"].astype(int))
