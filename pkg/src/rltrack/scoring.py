"""Connection classification and voxel coverage against phantom ground truth.

A streamline survives the length filter, then each endpoint is labelled by
the ROI of its nearest voxel after growing every ROI by one voxel (26
neighbourhood; a voxel touching several ROIs takes the closest one, then the
smallest label).  Two distinct labels form a connection, valid when the pair
belongs to a bundle.  Everything else, including both ends in the same ROI,
is a no-connection.

Coverage compares the voxels crossed by a bundle's valid streamlines with its
ground-truth mask; overreach is normalised by the mask size, so it can exceed 1.
"""
import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .volume import nearest_voxel

VC, IC, NC, DISCARDED = 1, 2, 3, 0


class ScoringError(ValueError):
    pass


def dilate_labels(labels):
    """Grow each nonzero label by one voxel without overwriting existing labels."""
    labels = np.asarray(labels).astype(np.int64)
    out = labels.copy()
    best = np.full(labels.shape, np.inf)
    shifts = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
              if (dx, dy, dz) != (0, 0, 0)]
    padded = np.pad(labels, 1)
    nx, ny, nz = labels.shape
    for dx, dy, dz in shifts:
        nb = padded[1 + dx:1 + dx + nx, 1 + dy:1 + dy + ny, 1 + dz:1 + dz + nz]
        d = dx * dx + dy * dy + dz * dz
        take = (labels == 0) & (nb > 0) & ((d < best) | ((d == best) & (nb < out)))
        out[take] = nb[take]
        best[take] = d
    return out


@dataclass
class GroundTruth:
    rois: np.ndarray
    affine: object
    valid_pairs: dict
    bundle_masks: list
    bundle_names: list
    min_length: float = 20.0
    max_length: float = 200.0

    def __post_init__(self):
        self.rois = np.asarray(self.rois).astype(np.int64)
        self.bundle_masks = [np.asarray(m, dtype=bool) for m in self.bundle_masks]
        self.valid_pairs = {frozenset(int(x) for x in k): int(v) for k, v in self.valid_pairs.items()}
        if len(self.bundle_masks) != len(self.bundle_names):
            raise ScoringError("one name per bundle mask required")
        for k in self.valid_pairs:
            if len(k) != 2:
                raise ScoringError("valid pairs need two distinct ROI labels")
        if not self.min_length < self.max_length:
            raise ScoringError("need min_length < max_length")
        self.endpoint_labels = dilate_labels(self.rois)

    @classmethod
    def from_phantom(cls, phantom, min_length=20.0, max_length=200.0):
        return cls(phantom.rois.data, phantom.rois.affine, phantom.valid_pairs,
                   [m.data > 0 for m in phantom.bundle_masks], list(phantom.bundle_names),
                   min_length, max_length)

    def label_at(self, points):
        idx, ok = nearest_voxel(self.affine, self.rois.shape, points)
        out = np.zeros(len(idx), dtype=np.int64)
        i = idx[ok]
        out[ok] = self.endpoint_labels[i[:, 0], i[:, 1], i[:, 2]]
        return out


@dataclass
class Classification:
    kind: np.ndarray
    bundle: np.ndarray
    ends: np.ndarray
    lengths: np.ndarray


def streamline_lengths(streamlines):
    return np.array([np.linalg.norm(np.diff(s, axis=0), axis=1).sum() if len(s) > 1 else 0.0
                     for s in streamlines])


def classify_streamlines(streamlines, gt):
    """Label each streamline VC / IC / NC, or DISCARDED by the length filter."""
    n = len(streamlines)
    lengths = streamline_lengths(streamlines)
    kind = np.full(n, NC, dtype=np.int64)
    bundle = np.full(n, -1, dtype=np.int64)
    ends = np.zeros((n, 2), dtype=np.int64)
    if n:
        tips = np.array([[s[0], s[-1]] for s in streamlines], dtype=np.float64).reshape(-1, 3)
        ends = np.sort(gt.label_at(tips).reshape(n, 2), axis=1)
    for i in range(n):
        if not gt.min_length <= lengths[i] <= gt.max_length:
            kind[i] = DISCARDED
            continue
        a, b = ends[i]
        if a == 0 or a == b:
            continue
        key = frozenset((int(a), int(b)))
        if key in gt.valid_pairs:
            kind[i] = VC
            bundle[i] = gt.valid_pairs[key]
        else:
            kind[i] = IC
    return Classification(kind, bundle, ends, lengths)


def visited_voxels(streamlines, affine, dims, backend=None):
    """Boolean volume of voxels crossed by the streamlines."""
    if not streamlines:
        return np.zeros(dims, dtype=bool)
    vox = affine.world_to_voxel(np.concatenate(streamlines))
    offsets = np.concatenate([[0], np.cumsum([len(s) for s in streamlines])])
    return kernels.rasterize(vox, offsets, dims, backend=backend).astype(bool)


def coverage_from_visited(visited, mask):
    mask = np.asarray(mask, dtype=bool)
    visited = np.asarray(visited, dtype=bool)
    m = int(mask.sum())
    if m == 0:
        raise ScoringError("empty bundle mask")
    inter = int((visited & mask).sum())
    outside = int((visited & ~mask).sum())
    ol = inter / m
    or_ = outside / m
    nv = int(visited.sum())
    p = inter / nv if nv else 0.0
    f1 = 2 * p * ol / (p + ol) if (p + ol) > 0 else 0.0
    return ol, or_, f1


def coverage(streamlines, mask, affine, backend=None):
    """(OL, OR, F1) of a set of streamlines against one bundle mask."""
    mask = np.asarray(mask, dtype=bool)
    return coverage_from_visited(visited_voxels(list(streamlines), affine, mask.shape, backend), mask)


@dataclass
class ScoreReport:
    n_streamlines: int
    n_kept: int
    vc: int
    ic: int
    nc: int
    vc_rate: float
    ic_rate: float
    nc_rate: float
    vb: int
    ib: int
    mean_ol: float
    mean_or: float
    mean_f1: float
    bundles: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def score(streamlines, gt):
    streamlines = [np.asarray(s, dtype=np.float64) for s in streamlines]
    if not streamlines:
        raise ScoringError("empty tractogram")
    cls = classify_streamlines(streamlines, gt)
    vc = int(np.sum(cls.kind == VC))
    ic = int(np.sum(cls.kind == IC))
    nc = int(np.sum(cls.kind == NC))
    kept = vc + ic + nc
    if kept:
        vc_rate, ic_rate = vc / kept, ic / kept
        nc_rate = 1.0 - vc_rate - ic_rate if nc else 0.0
    else:
        vc_rate, ic_rate, nc_rate = 0.0, 0.0, 1.0
    vb = len(set(cls.bundle[cls.kind == VC].tolist()))
    ib = len({tuple(e) for e, k in zip(cls.ends.tolist(), cls.kind) if k == IC})
    per = {}
    for b, (name, mask) in enumerate(zip(gt.bundle_names, gt.bundle_masks)):
        sel = [streamlines[i] for i in np.nonzero((cls.kind == VC) & (cls.bundle == b))[0]]
        ol, or_, f1 = coverage(sel, mask, gt.affine)
        per[name] = {"n_vc": len(sel), "ol": ol, "or": or_, "f1": f1}
    vals = list(per.values())
    return ScoreReport(
        n_streamlines=len(streamlines), n_kept=kept, vc=vc, ic=ic, nc=nc,
        vc_rate=vc_rate, ic_rate=ic_rate, nc_rate=nc_rate, vb=vb, ib=ib,
        mean_ol=float(np.mean([v["ol"] for v in vals])),
        mean_or=float(np.mean([v["or"] for v in vals])),
        mean_f1=float(np.mean([v["f1"] for v in vals])),
        bundles=per)


def write_scores(report, out_dir):
    """Write ``scores.json`` and ``scores.csv`` (one row per bundle plus 'all')."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "scores.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "scores.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bundle", "n_vc", "ol", "or", "f1", "vc_rate", "ic_rate", "nc_rate", "vb", "ib"])
        for name, v in report.bundles.items():
            w.writerow([name, v["n_vc"], repr(v["ol"]), repr(v["or"]), repr(v["f1"]), "", "", "", "", ""])
        w.writerow(["all", report.vc, repr(report.mean_ol), repr(report.mean_or), repr(report.mean_f1),
                    repr(report.vc_rate), repr(report.ic_rate), repr(report.nc_rate),
                    report.vb, report.ib])
