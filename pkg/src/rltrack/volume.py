"""Volumetric data model: affines, scalar/vector/peak grids and the V1 file format.

Volumes are immutable once built (their arrays are flagged read-only), so
many rollout workers may sample them concurrently.

V1 layout::

    format V1
    kind vector
    dims 20 20 3
    channels 28
    affine <16 floats, row-major>
    dtype f32le
    END
    <little-endian float32 blob, x fastest, then y, z, channel>
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class VolumeError(ValueError):
    pass


class AffineTransform:
    """4x4 voxel-index -> world-mm transform."""

    def __init__(self, matrix):
        m = np.array(matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise VolumeError(f"affine must be 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise VolumeError("affine has non-finite entries")
        if abs(np.linalg.det(m[:3, :3])) < 1e-12:
            raise VolumeError("affine 3x3 block is singular")
        self.matrix = m
        self.matrix.flags.writeable = False
        self._inv = np.linalg.inv(m)

    @classmethod
    def from_voxel_size(cls, voxel_size, origin=(0.0, 0.0, 0.0)):
        vs = np.broadcast_to(np.asarray(voxel_size, dtype=np.float64), (3,))
        m = np.eye(4)
        m[:3, :3] = np.diag(vs)
        m[:3, 3] = origin
        return cls(m)

    @property
    def voxel_sizes(self):
        return np.linalg.norm(self.matrix[:3, :3], axis=0)

    def voxel_to_world(self, p):
        p = np.asarray(p, dtype=np.float64)
        return p @ self.matrix[:3, :3].T + self.matrix[:3, 3]

    def world_to_voxel(self, p):
        p = np.asarray(p, dtype=np.float64)
        return p @ self._inv[:3, :3].T + self._inv[:3, 3]

    def world_dir_to_voxel(self, d):
        """Map a world displacement (no translation) into voxel units."""
        return np.asarray(d, dtype=np.float64) @ self._inv[:3, :3].T

    def __eq__(self, other):
        return isinstance(other, AffineTransform) and np.array_equal(self.matrix, other.matrix)

    def __repr__(self):
        return f"AffineTransform({self.matrix.tolist()})"


def _freeze(a):
    a = np.ascontiguousarray(a, dtype=np.float32)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ScalarVolume:
    data: np.ndarray
    affine: AffineTransform

    def __post_init__(self):
        d = _freeze(self.data)
        if d.ndim != 3 or min(d.shape) < 1:
            raise VolumeError(f"scalar volume needs 3 positive dims, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise VolumeError("volume data must be finite")
        object.__setattr__(self, "data", d)

    @property
    def dims(self):
        return self.data.shape

    @property
    def channels(self):
        return 1

    def grid(self):
        return self.data[..., None]

    def sample(self, points, backend=None):
        """Trilinear samples at world points; returns shape (N,)."""
        return sample_world(self, points, backend)[:, 0]

    def nearest(self, points):
        return nearest_lookup(self, points)


@dataclass(frozen=True)
class VectorVolume:
    data: np.ndarray
    affine: AffineTransform

    def __post_init__(self):
        d = _freeze(self.data)
        if d.ndim != 4 or min(d.shape) < 1:
            raise VolumeError(f"vector volume needs (nx, ny, nz, C), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise VolumeError("volume data must be finite")
        object.__setattr__(self, "data", d)

    @property
    def dims(self):
        return self.data.shape[:3]

    @property
    def channels(self):
        return self.data.shape[3]

    def grid(self):
        return self.data

    def sample(self, points, backend=None):
        return sample_world(self, points, backend)

    def nearest(self, points):
        return nearest_lookup(self, points)


@dataclass(frozen=True)
class PeaksVolume:
    """Up to K unit peak directions per voxel, zero padded: shape (nx, ny, nz, K, 3)."""

    data: np.ndarray
    affine: AffineTransform
    tol: float = field(default=1e-6, repr=False)

    def __post_init__(self):
        d = _freeze(self.data)
        if d.ndim != 5 or d.shape[4] != 3:
            raise VolumeError(f"peaks volume needs (nx, ny, nz, K, 3), got {d.shape}")
        if not 1 <= d.shape[3] <= 5:
            raise VolumeError("max_peaks must be in 1..5")
        norms = np.linalg.norm(d.astype(np.float64), axis=-1)
        nz = norms > 0
        if np.any(np.abs(norms[nz] - 1.0) > self.tol):
            raise VolumeError("stored peaks must be unit vectors")
        object.__setattr__(self, "data", d)

    @property
    def dims(self):
        return self.data.shape[:3]

    @property
    def max_peaks(self):
        return self.data.shape[3]

    @property
    def channels(self):
        return 3 * self.max_peaks

    def grid(self):
        return self.data.reshape(self.dims + (self.channels,))

    def nearest(self, points):
        """Peaks of the voxel nearest to each world point; (N, K, 3), zeros outside."""
        flat = nearest_lookup(self, points)
        return flat.reshape(-1, self.max_peaks, 3)


def sample_world(vol, points, backend=None):
    """Trilinear interpolation at world-mm points; zeros outside the grid."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    vox = vol.affine.world_to_voxel(pts)
    return kernels.trilinear(vol.grid(), vox, backend=backend)


def trilinear_sample(vol, p_world, backend=None):
    """Sample a single world point (or a batch); scalar volumes give a 1-vector."""
    p = np.asarray(p_world, dtype=np.float64)
    out = sample_world(vol, p, backend)
    return out[0] if p.ndim == 1 else out


def nearest_voxel(affine, dims, points):
    """Nearest voxel indices for world points plus an in-grid mask."""
    vox = affine.world_to_voxel(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    idx = np.floor(vox + 0.5).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < np.asarray(dims)), axis=1)
    return idx, ok


def nearest_lookup(vol, points):
    idx, ok = nearest_voxel(vol.affine, vol.dims, points)
    grid = vol.grid()
    out = np.zeros((idx.shape[0], grid.shape[3]), dtype=np.float64)
    i = idx[ok]
    out[ok] = grid[i[:, 0], i[:, 1], i[:, 2]]
    return out


# -- V1 file format ---------------------------------------------------------

_KINDS = {"scalar": ScalarVolume, "vector": VectorVolume, "peaks": PeaksVolume}


def _kind_of(vol):
    for name, cls in _KINDS.items():
        if isinstance(vol, cls):
            return name
    raise VolumeError(f"not a volume: {type(vol).__name__}")


def save_v1(path, vol, meta=None):
    kind = _kind_of(vol)
    grid = np.asarray(vol.grid(), dtype="<f4")
    lines = [
        "format V1",
        f"kind {kind}",
        "dims " + " ".join(str(int(d)) for d in vol.dims),
        f"channels {grid.shape[3]}",
        "affine " + " ".join(repr(float(v)) for v in vol.affine.matrix.ravel()),
        "dtype f32le",
    ]
    if kind == "peaks":
        lines.append(f"max_peaks {vol.max_peaks}")
    for key, value in sorted((meta or {}).items()):
        if not key.isidentifier() or "\n" in str(value):
            raise VolumeError(f"bad metadata entry {key!r}")
        lines.append(f"{key} {value}")
    lines.append("END")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(grid.tobytes(order="F"))


def load_v1(path, with_meta=False):
    with open(path, "rb") as fh:
        raw = fh.read()
    meta = {}
    pos = 0
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise VolumeError(f"{path}: header not terminated by END")
        line = raw[pos:end].decode("utf-8")
        pos = end + 1
        if line == "END":
            break
        key, _, value = line.partition(" ")
        meta[key] = value
    if meta.get("format") != "V1":
        raise VolumeError(f"{path}: not a V1 volume")
    if meta.get("dtype") != "f32le":
        raise VolumeError(f"{path}: unsupported dtype {meta.get('dtype')!r}")
    try:
        dims = tuple(int(v) for v in meta["dims"].split())
        channels = int(meta["channels"])
        affine = AffineTransform(np.array([float(v) for v in meta["affine"].split()]).reshape(4, 4))
    except (KeyError, ValueError) as exc:
        raise VolumeError(f"{path}: malformed header ({exc})") from None
    count = int(np.prod(dims)) * channels
    blob = np.frombuffer(raw, dtype="<f4", offset=pos)
    if blob.size != count:
        raise VolumeError(f"{path}: expected {count} floats, found {blob.size}")
    grid = blob.reshape(dims + (channels,), order="F").astype(np.float32)
    kind = meta.get("kind", "vector")
    if kind == "scalar":
        vol = ScalarVolume(grid[..., 0], affine)
    elif kind == "peaks":
        k = int(meta["max_peaks"])
        vol = PeaksVolume(grid.reshape(dims + (k, 3)), affine)
    else:
        vol = VectorVolume(grid, affine)
    extra = {k: v for k, v in meta.items()
             if k not in {"format", "kind", "dims", "channels", "affine", "dtype", "max_peaks"}}
    return (vol, extra) if with_meta else vol
