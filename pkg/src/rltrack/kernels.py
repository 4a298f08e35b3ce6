"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise (or when
``RLTRACK_PURE_PYTHON=1``) the numpy implementations are used.  Both
backends share one calling convention, normalised here.
"""
import os

import numpy as np

from . import _pykernels

_ext = None
if os.environ.get("RLTRACK_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _ext
    except ImportError:  # pragma: no cover - depends on the build
        _ext = None

BACKEND = "cython" if _ext is not None else "python"


def backend_module(name=None):
    """Return the kernel module for ``name`` ('cython', 'python' or None=active)."""
    name = name or BACKEND
    if name == "cython":
        if _ext is None:
            raise RuntimeError("compiled kernels are not available")
        return _ext
    if name == "python":
        return _pykernels
    raise ValueError(f"unknown kernel backend {name!r}")


def trilinear(data, vox, backend=None):
    mod = backend_module(backend)
    data = np.ascontiguousarray(data, dtype=np.float32)
    if data.ndim == 3:
        data = data[..., None]
    vox = np.ascontiguousarray(np.asarray(vox, dtype=np.float64).reshape(-1, 3))
    return mod.trilinear(data, vox)


def rasterize(vox, offsets, dims, backend=None):
    mod = backend_module(backend)
    vox = np.ascontiguousarray(np.asarray(vox, dtype=np.float64).reshape(-1, 3))
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    return mod.rasterize(vox, offsets, tuple(int(d) for d in dims))


def discounted(rewards, dones, bootstrap, gamma, backend=None):
    mod = backend_module(backend)
    return mod.discounted(
        np.ascontiguousarray(rewards, dtype=np.float64),
        np.ascontiguousarray(dones, dtype=np.uint8),
        np.ascontiguousarray(bootstrap, dtype=np.float64),
        float(gamma),
    )


def gae(rewards, values, next_values, terminals, dones, gamma, lam, backend=None):
    mod = backend_module(backend)
    return mod.gae(
        np.ascontiguousarray(rewards, dtype=np.float64),
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(next_values, dtype=np.float64),
        np.ascontiguousarray(terminals, dtype=np.uint8),
        np.ascontiguousarray(dones, dtype=np.uint8),
        float(gamma),
        float(lam),
    )
