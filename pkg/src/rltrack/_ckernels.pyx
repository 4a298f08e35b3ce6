# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in :mod:`rltrack._pykernels`.

Signatures and semantics match the numpy fallbacks exactly; see that module
for documentation.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil, sqrt

cnp.import_array()


def trilinear(const float[:, :, :, ::1] data, const double[:, ::1] vox):
    cdef Py_ssize_t nx = data.shape[0], ny = data.shape[1], nz = data.shape[2]
    cdef Py_ssize_t nc = data.shape[3]
    cdef Py_ssize_t n = vox.shape[0]
    out_arr = np.zeros((n, nc), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, c, x0, y0, z0, x1, y1, z1
    cdef double x, y, z, fx, fy, fz, gx, gy, gz
    cdef double w000, w100, w010, w110, w001, w101, w011, w111
    with nogil:
        for i in range(n):
            x = vox[i, 0]
            y = vox[i, 1]
            z = vox[i, 2]
            if (x < -0.5 or x > nx - 0.5 or y < -0.5 or y > ny - 0.5
                    or z < -0.5 or z > nz - 0.5):
                continue
            if x < 0:
                x = 0
            if x > nx - 1:
                x = nx - 1
            if y < 0:
                y = 0
            if y > ny - 1:
                y = ny - 1
            if z < 0:
                z = 0
            if z > nz - 1:
                z = nz - 1
            x0 = <Py_ssize_t>floor(x)
            y0 = <Py_ssize_t>floor(y)
            z0 = <Py_ssize_t>floor(z)
            x1 = x0 + 1 if x0 + 1 < nx else x0
            y1 = y0 + 1 if y0 + 1 < ny else y0
            z1 = z0 + 1 if z0 + 1 < nz else z0
            fx = x - x0
            fy = y - y0
            fz = z - z0
            gx = 1.0 - fx
            gy = 1.0 - fy
            gz = 1.0 - fz
            w000 = gx * gy * gz
            w100 = fx * gy * gz
            w010 = gx * fy * gz
            w110 = fx * fy * gz
            w001 = gx * gy * fz
            w101 = fx * gy * fz
            w011 = gx * fy * fz
            w111 = fx * fy * fz
            for c in range(nc):
                out[i, c] = (w000 * data[x0, y0, z0, c] + w100 * data[x1, y0, z0, c]
                             + w010 * data[x0, y1, z0, c] + w110 * data[x1, y1, z0, c]
                             + w001 * data[x0, y0, z1, c] + w101 * data[x1, y0, z1, c]
                             + w011 * data[x0, y1, z1, c] + w111 * data[x1, y1, z1, c])
    return out_arr


def rasterize(const double[:, ::1] vox, const long long[::1] offsets, dims):
    cdef Py_ssize_t nx = dims[0], ny = dims[1], nz = dims[2]
    out_arr = np.zeros((nx, ny, nz), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] out = out_arr
    cdef Py_ssize_t s, k, j, nsub, start, stop, ix, iy, iz
    cdef Py_ssize_t ns = offsets.shape[0] - 1
    cdef double ax, ay, az, dx, dy, dz, seglen, t, px, py, pz
    with nogil:
        for s in range(ns):
            start = offsets[s]
            stop = offsets[s + 1]
            if stop - start == 1:
                ix = <Py_ssize_t>floor(vox[start, 0] + 0.5)
                iy = <Py_ssize_t>floor(vox[start, 1] + 0.5)
                iz = <Py_ssize_t>floor(vox[start, 2] + 0.5)
                if 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz:
                    out[ix, iy, iz] = 1
                continue
            for k in range(start, stop - 1):
                ax = vox[k, 0]
                ay = vox[k, 1]
                az = vox[k, 2]
                dx = vox[k + 1, 0] - ax
                dy = vox[k + 1, 1] - ay
                dz = vox[k + 1, 2] - az
                seglen = sqrt(dx * dx + dy * dy + dz * dz)
                nsub = <Py_ssize_t>ceil(seglen / 0.5)
                if nsub < 1:
                    nsub = 1
                for j in range(nsub + 1):
                    t = (<double>j) / nsub
                    px = ax + t * dx
                    py = ay + t * dy
                    pz = az + t * dz
                    ix = <Py_ssize_t>floor(px + 0.5)
                    iy = <Py_ssize_t>floor(py + 0.5)
                    iz = <Py_ssize_t>floor(pz + 0.5)
                    if 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz:
                        out[ix, iy, iz] = 1
    return out_arr


def discounted(const double[::1] rewards, const unsigned char[::1] dones,
               const double[::1] bootstrap, double gamma):
    cdef Py_ssize_t n = rewards.shape[0]
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double running = 0.0
    cdef Py_ssize_t t
    with nogil:
        for t in range(n - 1, -1, -1):
            if dones[t]:
                running = bootstrap[t]
            running = rewards[t] + gamma * running
            out[t] = running
    return out_arr


def gae(const double[::1] rewards, const double[::1] values,
        const double[::1] next_values, const unsigned char[::1] terminals,
        const unsigned char[::1] dones, double gamma, double lam):
    cdef Py_ssize_t n = rewards.shape[0]
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double running = 0.0, delta
    cdef Py_ssize_t t
    with nogil:
        for t in range(n - 1, -1, -1):
            if dones[t]:
                running = 0.0
            delta = rewards[t] - values[t]
            if not terminals[t]:
                delta = delta + gamma * next_values[t]
            running = delta + gamma * lam * running
            out[t] = running
    return out_arr
