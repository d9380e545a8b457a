"""Synthetic periodic voxel representative volume elements.

Periodic Voronoi tessellation of the unit cell from random seed points,
mixture-model texture assignment with angular scatter about component
orientations, and random cubic elastic constants.  RVEs round-trip through a
versioned ``.npz`` container.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rotations

__all__ = ["Rve", "TextureComponent", "TextureSpec", "generate_rve",
           "assign_texture", "sample_elastic_triples", "save_rve", "load_rve"]

RVE_FORMAT_VERSION = 1


@dataclass
class TextureComponent:
    """One texture component: an ideal orientation, mixture weight, and
    half-normal scatter (radians) of the misorientation angle about it."""

    quat: np.ndarray
    weight: float
    scatter: float


@dataclass
class TextureSpec:
    """Mixture of texture components plus a uniform-random background.

    A grain picks the background (uniform orientation) or a component with
    probability proportional to the respective weight; all weights must be
    >= 1 (background included), mirroring multiples-of-random-density usage
    where 1 is the uniform level.
    """

    components: list  # of TextureComponent
    background_weight: float = 1.0

    def __post_init__(self):
        ws = [c.weight for c in self.components] + [self.background_weight]
        if any(w < 1.0 for w in ws):
            raise ValueError("all texture weights must be >= 1")


@dataclass
class Rve:
    """Voxel grid of grain ids with per-grain orientation and stiffness."""

    grain_ids: np.ndarray          # (n, n, n) int, values 0..G-1
    orientations: np.ndarray       # (G, 4) unit quaternions, FZ-reduced
    stiffness: np.ndarray          # (G, 6, 6) crystal-frame Voigt
    elastic_constants: np.ndarray  # (C11, C12, C44)
    meta: dict = field(default_factory=dict)

    @property
    def n_grains(self):
        return self.orientations.shape[0]

    def volume_fractions(self):
        counts = np.bincount(self.grain_ids.ravel(), minlength=self.n_grains)
        return counts / counts.sum()

    def sample_frame_stiffness(self):
        """Per-grain stiffness rotated from crystal to sample frame."""
        out = np.empty_like(self.stiffness)
        for g in range(self.n_grains):
            out[g] = rotations.rotate_stiffness(self.stiffness[g],
                                                self.orientations[g])
        return out


def _as_dims(dims):
    if np.isscalar(dims):
        dims = (int(dims),) * 3
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 4:
        raise ValueError("dims must be three integers, each >= 4")
    return dims


def _periodic_voronoi_ids(seeds, dims):
    """Nearest-seed label per voxel center under the minimum-image metric."""
    axes = [(np.arange(n) + 0.5) / n for n in dims]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([X, Y, Z], axis=-1)               # (nx, ny, nz, 3)
    d = pts[..., None, :] - seeds[None, None, None]  # (nx, ny, nz, G, 3)
    d -= np.round(d)                                 # minimum image
    return np.argmin((d ** 2).sum(axis=-1), axis=-1)


def generate_rve(dims, n_grains, seed=0, max_retries=10):
    """Periodic Voronoi grain structure on a voxel grid.

    ``dims`` is a scalar (cubic grid) or (nx, ny, nz).  Seed points are
    uniform in the unit cell; if any grain captures no voxel (possible at
    coarse resolution) the tessellation is reseeded, up to ``max_retries``
    times.  Returns ``(grain_ids, seeds)``.
    """
    dims = _as_dims(dims)
    if n_grains < 1 or n_grains > np.prod(dims):
        raise ValueError("grain count must be in [1, voxel count]")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        seeds = rng.uniform(0.0, 1.0, size=(n_grains, 3))
        ids = _periodic_voronoi_ids(seeds, dims)
        if np.bincount(ids.ravel(), minlength=n_grains).min() > 0:
            return ids, seeds
    raise RuntimeError(
        f"failed to place {n_grains} non-empty grains on a {dims} grid "
        f"after {max_retries} attempts")


def _perturb(quat, scatter, rng):
    """Rotate by a random axis and half-normal angle |N(0, scatter)|."""
    if scatter <= 0:
        return quat
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    ang = abs(rng.normal(0.0, scatter))
    p = np.concatenate([[np.cos(ang / 2.0)], np.sin(ang / 2.0) * axis])
    return rotations.quat_multiply(p, quat)


def assign_texture(n_grains, spec, seed=0):
    """Draw one FZ-reduced orientation per grain from a texture mixture.

    Each grain picks the uniform-random background or a texture component
    with probability proportional to weight; component draws scatter the
    ideal orientation by a half-normal misorientation angle.
    """
    rng = np.random.default_rng(seed)
    comps = spec.components
    w = np.array([c.weight for c in comps] + [spec.background_weight])
    w = w / w.sum()
    quats = np.empty((n_grains, 4))
    for g in range(n_grains):
        pick = rng.choice(len(w), p=w)
        if pick == len(comps):  # background
            quats[g] = rotations.random_quat(rng)
        else:
            c = comps[pick]
            quats[g] = _perturb(np.asarray(c.quat, dtype=float), c.scatter, rng)
    return rotations.to_fcc_fundamental_zone(quats)


def sample_elastic_triples(n, seed=0, c11_range=(80.0, 300.0),
                           c12_frac_range=(0.2, 0.8),
                           zener_range=(0.4, 2.5)):
    """Random cubic elastic constants (C11, C12, C44), shape (n, 3).

    C11 is uniform in ``c11_range`` (GPa), C12 a uniform fraction of C11, and
    C44 set through a uniform Zener anisotropy ratio A = 2 C44 / (C11 - C12).
    """
    rng = np.random.default_rng(seed)
    c11 = rng.uniform(*c11_range, size=n)
    c12 = rng.uniform(*c12_frac_range, size=n) * c11
    A = rng.uniform(*zener_range, size=n)
    c44 = 0.5 * A * (c11 - c12)
    return np.stack([c11, c12, c44], axis=-1)


def make_rve(dims, n_grains, spec, elastic_constants, seed=0):
    """Assemble a complete RVE: geometry, texture, and one shared cubic
    stiffness triple for all grains."""
    ids, seeds = generate_rve(dims, n_grains, seed=seed)
    quats = assign_texture(n_grains, spec, seed=seed + 1)
    c11, c12, c44 = elastic_constants
    C = rotations.cubic_stiffness(c11, c12, c44)
    return Rve(grain_ids=ids,
               orientations=quats,
               stiffness=np.broadcast_to(C, (n_grains, 6, 6)).copy(),
               elastic_constants=np.asarray(elastic_constants, dtype=float),
               meta={"seed": seed, "seeds": seeds})


def save_rve(rve, path):
    np.savez_compressed(
        path, version=RVE_FORMAT_VERSION, grain_ids=rve.grain_ids,
        orientations=rve.orientations, stiffness=rve.stiffness,
        elastic_constants=rve.elastic_constants)


def load_rve(path):
    with np.load(path) as d:
        if int(d["version"]) != RVE_FORMAT_VERSION:
            raise ValueError(f"unsupported RVE format version {d['version']}")
        return Rve(grain_ids=d["grain_ids"],
                   orientations=d["orientations"],
                   stiffness=d["stiffness"],
                   elastic_constants=d["elastic_constants"])
