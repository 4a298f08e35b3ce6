"""Pure numpy implementations of the hot loops.

These are the reference versions; ``_ckernels.pyx`` mirrors them.  All
coordinates handed to these functions are already in voxel space.
"""
import numpy as np


def trilinear(data, vox):
    """Trilinear interpolation of a (nx, ny, nz, C) grid at (N, 3) voxel coords.

    A point is inside the grid when every coordinate lies in the voxel
    footprint ``[-0.5, n - 0.5]``; between the outermost voxel centre and the
    footprint edge the edge value is held.  Outside points return zeros.
    """
    data = np.asarray(data)
    vox = np.asarray(vox, dtype=np.float64).reshape(-1, 3)
    dims = np.array(data.shape[:3])
    out = np.zeros((vox.shape[0], data.shape[3]), dtype=np.float64)
    inside = np.all((vox >= -0.5) & (vox <= dims - 0.5), axis=1)
    if not inside.any():
        return out
    c = np.clip(vox[inside], 0, dims - 1)
    i0 = np.floor(c).astype(np.intp)
    i1 = np.minimum(i0 + 1, dims - 1)
    f = c - i0
    g = 1.0 - f
    acc = np.zeros((c.shape[0], data.shape[3]), dtype=np.float64)
    for cx in (0, 1):
        ix = i1[:, 0] if cx else i0[:, 0]
        wx = f[:, 0] if cx else g[:, 0]
        for cy in (0, 1):
            iy = i1[:, 1] if cy else i0[:, 1]
            wy = f[:, 1] if cy else g[:, 1]
            for cz in (0, 1):
                iz = i1[:, 2] if cz else i0[:, 2]
                wz = f[:, 2] if cz else g[:, 2]
                acc += (wx * wy * wz)[:, None] * data[ix, iy, iz].astype(np.float64)
    out[inside] = acc
    return out


def rasterize(vox, offsets, dims):
    """Mark every voxel visited by a set of polylines.

    Segments are sampled at intervals of at most half a voxel and each sample
    is assigned to its nearest voxel.  Returns a uint8 volume.
    """
    vox = np.asarray(vox, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.int64)
    dims = tuple(int(d) for d in dims)
    out = np.zeros(dims, dtype=np.uint8)
    samples = []
    for s in range(len(offsets) - 1):
        pts = vox[offsets[s]:offsets[s + 1]]
        if len(pts) == 1:
            samples.append(pts)
            continue
        a, d = pts[:-1], np.diff(pts, axis=0)
        nsub = np.maximum(np.ceil(np.linalg.norm(d, axis=1) / 0.5), 1).astype(np.int64)
        for k in range(len(a)):
            t = np.arange(nsub[k] + 1, dtype=np.float64) / nsub[k]
            samples.append(a[k] + t[:, None] * d[k])
    if not samples:
        return out
    idx = np.floor(np.concatenate(samples) + 0.5).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < np.array(dims)), axis=1)
    idx = idx[ok]
    out[idx[:, 0], idx[:, 1], idx[:, 2]] = 1
    return out


def discounted(rewards, dones, bootstrap, gamma):
    """``G_t = r_t + gamma * (bootstrap_t if done_t else G_{t+1})``."""
    n = len(rewards)
    out = np.zeros(n, dtype=np.float64)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            running = bootstrap[t]
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def gae(rewards, values, next_values, terminals, dones, gamma, lam):
    """GAE over concatenated trajectories; recursion resets at ``dones``."""
    n = len(rewards)
    out = np.zeros(n, dtype=np.float64)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            running = 0.0
        delta = rewards[t] - values[t]
        if not terminals[t]:
            delta += gamma * next_values[t]
        running = delta + gamma * lam * running
        out[t] = running
    return out
