"""Synthetic tube phantoms standing in for FiberCup-style acquisitions.

A phantom is a handful of bundles, each a centerline polyline swept into a
tube of fixed radius and capped at both ends by a labelled ROI.  From that
geometry we derive every volume the tracker and scorer need.

Phantom config keys (YAML or JSON)::

    dims: [24, 20, 3]          # grid size
    voxel_size: 3.0            # mm, isotropic
    kappa: 30.0                # fODF lobe sharpness
    max_peaks: 3
    roi_depth: 3.0             # mm of cap beyond each tube end
    bundles:
      - name: straight
        radius: 4.5            # mm
        head_roi: 1
        tail_roi: 2
        line: {start: [6, 12, 3], end: [63, 12, 3]}   # or
        # arc: {center: [..], radius: .., start_deg: .., end_deg: ..}  or
        # points: [[x, y, z], ...]
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .sh import DEFAULT_KAPPA, N_COEFFS, sh_project_peaks, sphere100
from .volume import AffineTransform, PeaksVolume, ScalarVolume, VectorVolume

FA_SINGLE = 0.8
FA_CROSSING = 0.5
PEAK_MERGE_COS = np.cos(np.radians(15.0))


class PhantomError(ValueError):
    pass


@dataclass
class BundleSpec:
    name: str
    centerline: np.ndarray
    radius: float
    head_roi: int
    tail_roi: int

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=np.float64).reshape(-1, 3)
        if len(self.centerline) < 2:
            raise PhantomError(f"bundle {self.name!r}: centerline needs >= 2 points")
        if not self.radius > 0:
            raise PhantomError(f"bundle {self.name!r}: radius must be > 0")
        if self.head_roi == self.tail_roi or min(self.head_roi, self.tail_roi) < 1:
            raise PhantomError(f"bundle {self.name!r}: ROI ids must be distinct positive ints")


@dataclass
class PhantomSpec:
    dims: tuple
    voxel_size: float
    bundles: list
    kappa: float = DEFAULT_KAPPA
    max_peaks: int = 3
    roi_depth: float = None

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise PhantomError(f"dims must be 3 positive ints, got {self.dims}")
        if not self.voxel_size > 0:
            raise PhantomError("voxel_size must be > 0")
        if not self.kappa > 0:
            raise PhantomError("kappa must be > 0")
        if not 1 <= self.max_peaks <= 5:
            raise PhantomError("max_peaks must be in 1..5")
        if self.roi_depth is None:
            self.roi_depth = float(self.voxel_size)
        if not self.bundles:
            raise PhantomError("phantom needs at least one bundle")

    @property
    def affine(self):
        return AffineTransform.from_voxel_size(self.voxel_size)


@dataclass
class Phantom:
    spec: PhantomSpec
    fodf: VectorVolume
    raw: VectorVolume
    peaks: PeaksVolume
    wm_mask: ScalarVolume
    interface_mask: ScalarVolume
    fa: ScalarVolume
    rois: ScalarVolume
    bundle_masks: list
    bundle_names: list
    valid_pairs: dict = field(default_factory=dict)

    def centerlines(self, step=None):
        """Bundle centerlines as streamlines, pushed half a cap into each ROI."""
        out = []
        for b in self.spec.bundles:
            pts = b.centerline
            ext = 0.5 * self.spec.roi_depth
            head = pts[0] + ext * _unit(pts[0] - pts[1])
            tail = pts[-1] + ext * _unit(pts[-1] - pts[-2])
            line = np.vstack([head, pts, tail])
            if step is not None:
                line = resample_polyline(line, step)
            out.append(line)
        return out


def _unit(v):
    return v / np.linalg.norm(v)


def line_points(start, end, n=2):
    return np.linspace(np.asarray(start, float), np.asarray(end, float), n)


def arc_points(center, radius, start_deg, end_deg, n=64):
    a = np.radians(np.linspace(start_deg, end_deg, n))
    c = np.asarray(center, dtype=np.float64)
    return np.stack([c[0] + radius * np.cos(a), c[1] + radius * np.sin(a), np.full(n, c[2])], axis=1)


def resample_polyline(pts, step):
    """Points spaced exactly ``step`` apart along the polyline (last point may fall short)."""
    pts = np.asarray(pts, dtype=np.float64)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.arange(0.0, s[-1] + 1e-9, step)
    return np.stack([np.interp(targets, s, pts[:, k]) for k in range(3)], axis=1)


def _closest_on_polyline(points, poly):
    """Distance, unit tangent and along-end offsets for each point."""
    a = poly[:-1]
    d = np.diff(poly, axis=0)
    dd = (d * d).sum(axis=1)
    rel = points[:, None, :] - a[None, :, :]
    t = np.clip((rel * d[None]).sum(-1) / dd[None], 0.0, 1.0)
    proj = a[None] + t[..., None] * d[None]
    dist = np.linalg.norm(points[:, None, :] - proj, axis=-1)
    k = np.argmin(dist, axis=1)
    rows = np.arange(len(points))
    tangent = d[k] / np.sqrt(dd[k])[:, None]
    return dist[rows, k], tangent


def generate_phantom(spec: PhantomSpec) -> Phantom:
    nx, ny, nz = spec.dims
    affine = spec.affine
    grid = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"), -1)
    centers = affine.voxel_to_world(grid.reshape(-1, 3).astype(np.float64))
    lo = affine.voxel_to_world(np.full(3, -0.5))
    hi = affine.voxel_to_world(np.array(spec.dims, dtype=np.float64) - 0.5)

    nvox = len(centers)
    tubes = []
    tangents = []
    roi_flat = np.zeros(nvox, dtype=np.int64)
    roi_claims = []
    for b in spec.bundles:
        pts = b.centerline
        if np.any(pts < lo) or np.any(pts > hi):
            raise PhantomError(f"bundle {b.name!r} does not fit inside the grid")
        dist, tan = _closest_on_polyline(centers, pts)
        ends = []
        for end, prev in ((pts[0], pts[1]), (pts[-1], pts[-2])):
            out_dir = _unit(end - prev)
            rel = centers - end
            along = rel @ out_dir
            perp = np.linalg.norm(rel - along[:, None] * out_dir, axis=1)
            ends.append((along, perp))
        tube = (dist <= b.radius) & (ends[0][0] <= 0) & (ends[1][0] <= 0)
        tubes.append(tube)
        tangents.append(tan)
        for (along, perp), rid in zip(ends, (b.head_roi, b.tail_roi)):
            cap = (along > 0) & (along <= spec.roi_depth) & (perp <= b.radius)
            roi_claims.append((cap, rid))

    wm = np.any(tubes, axis=0)
    for cap, rid in roi_claims:
        cap = cap & ~wm
        clash = cap & (roi_flat != 0) & (roi_flat != rid)
        if clash.any():
            raise PhantomError(f"ROI {rid} overlaps another ROI")
        roi_flat[cap] = rid
    used = set(int(r) for r in np.unique(roi_flat) if r)
    for b in spec.bundles:
        for rid in (b.head_roi, b.tail_roi):
            if rid not in used:
                raise PhantomError(f"bundle {b.name!r}: ROI {rid} is empty (bundle touches the grid edge?)")

    k = spec.max_peaks
    peaks = np.zeros((nvox, k, 3), dtype=np.float64)
    npeaks = np.zeros(nvox, dtype=np.int64)
    for tube, tan in zip(tubes, tangents):
        for v in np.nonzero(tube)[0]:
            t = tan[v]
            have = peaks[v, :npeaks[v]]
            if npeaks[v] and np.any(np.abs(have @ t) > PEAK_MERGE_COS):
                continue
            if npeaks[v] < k:
                peaks[v, npeaks[v]] = t
                npeaks[v] += 1

    fa = np.where(npeaks == 1, FA_SINGLE, np.where(npeaks > 1, FA_CROSSING, 0.0))

    fodf = np.zeros((nvox, N_COEFFS))
    raw = np.zeros((nvox, 100))
    dirs = sphere100()
    cache = {}
    for v in np.nonzero(npeaks)[0]:
        key = np.round(peaks[v, :npeaks[v]], 9).tobytes()
        if key not in cache:
            p = peaks[v, :npeaks[v]]
            cache[key] = (sh_project_peaks(p, spec.kappa), _stick_signal(p, dirs))
        fodf[v], raw[v] = cache[key]
    fodf /= max(np.abs(fodf).max(), 1e-12)

    shape = spec.dims
    rois = roi_flat.reshape(shape)
    roi_any = rois > 0
    interface = ndimage.binary_dilation(roi_any, structure=np.ones((3, 3, 3), bool)) & wm.reshape(shape)

    pairs = {}
    for i, b in enumerate(spec.bundles):
        key = frozenset((b.head_roi, b.tail_roi))
        if key in pairs:
            raise PhantomError("two bundles share the same ROI pair")
        pairs[key] = i

    return Phantom(
        spec=spec,
        fodf=VectorVolume(fodf.reshape(shape + (N_COEFFS,)), affine),
        raw=VectorVolume(raw.reshape(shape + (100,)), affine),
        peaks=PeaksVolume(peaks.reshape(shape + (k, 3)), affine),
        wm_mask=ScalarVolume(wm.reshape(shape).astype(np.float32), affine),
        interface_mask=ScalarVolume(interface.astype(np.float32), affine),
        fa=ScalarVolume(fa.reshape(shape), affine),
        rois=ScalarVolume(rois.astype(np.float32), affine),
        bundle_masks=[ScalarVolume(t.reshape(shape).astype(np.float32), affine) for t in tubes],
        bundle_names=[b.name for b in spec.bundles],
        valid_pairs=pairs,
    )


def _stick_signal(peaks, dirs, b=1000.0, d_par=1.7e-3, d_perp=0.3e-3):
    """Min-max normalised multi-stick attenuation sampled on ``dirs``."""
    cos2 = (dirs @ peaks.T) ** 2
    s = np.exp(-b * (d_perp + (d_par - d_perp) * cos2)).mean(axis=1)
    span = s.max() - s.min()
    return (s - s.min()) / span if span > 0 else np.zeros_like(s)


def desk_phantom_spec():
    """The 3-bundle desk phantom: one straight, one curved, one crossing the straight."""
    vs = 3.0
    z = 1 * vs

    def v(x, y):
        return [x * vs, y * vs, z]

    bundles = [
        BundleSpec("straight", line_points(v(2, 4), v(21, 4)), 4.5, 1, 2),
        BundleSpec("crossing", line_points(v(6, 1), v(6, 17)), 4.5, 3, 4),
        BundleSpec("curved", arc_points(v(16, 12), 6 * vs, 180.0, 0.0, 96), 4.5, 5, 6),
    ]
    return PhantomSpec(dims=(24, 21, 3), voxel_size=vs, bundles=bundles)


def single_bundle_spec(dims=(16, 7, 3), voxel_size=3.0, radius=4.5):
    """One straight horizontal bundle through the middle of the grid."""
    vs = voxel_size
    y, z = (dims[1] // 2) * vs, (dims[2] // 2) * vs
    b = BundleSpec("straight", line_points([2 * vs, y, z], [(dims[0] - 3) * vs, y, z]), radius, 1, 2)
    return PhantomSpec(dims=dims, voxel_size=vs, bundles=[b])


# -- config files -------------------------------------------------------------

_PHANTOM_KEYS = {"dims", "voxel_size", "kappa", "max_peaks", "roi_depth", "bundles"}
_BUNDLE_KEYS = {"name", "radius", "head_roi", "tail_roi", "line", "arc", "points"}


def phantom_spec_from_dict(cfg):
    if cfg.get("preset") == "desk" and set(cfg) == {"preset"}:
        return desk_phantom_spec()
    unknown = set(cfg) - _PHANTOM_KEYS
    if unknown:
        raise PhantomError(f"unknown phantom keys: {sorted(unknown)}")
    bundles = []
    for i, b in enumerate(cfg.get("bundles") or []):
        unknown = set(b) - _BUNDLE_KEYS
        if unknown:
            raise PhantomError(f"bundle {i}: unknown keys {sorted(unknown)}")
        shapes = [k for k in ("line", "arc", "points") if k in b]
        if len(shapes) != 1:
            raise PhantomError(f"bundle {i}: give exactly one of line/arc/points")
        if "line" in b:
            pts = line_points(b["line"]["start"], b["line"]["end"])
        elif "arc" in b:
            a = b["arc"]
            pts = arc_points(a["center"], a["radius"], a["start_deg"], a["end_deg"], int(a.get("n", 64)))
        else:
            pts = np.asarray(b["points"], dtype=np.float64)
        bundles.append(BundleSpec(str(b.get("name", f"bundle{i}")), pts, float(b["radius"]),
                                  int(b["head_roi"]), int(b["tail_roi"])))
    try:
        return PhantomSpec(
            dims=cfg["dims"],
            voxel_size=float(cfg["voxel_size"]),
            bundles=bundles,
            kappa=float(cfg.get("kappa", DEFAULT_KAPPA)),
            max_peaks=int(cfg.get("max_peaks", 3)),
            roi_depth=cfg.get("roi_depth"),
        )
    except KeyError as exc:
        raise PhantomError(f"missing phantom key {exc}") from None


def phantom_spec_to_dict(spec):
    return {
        "dims": list(spec.dims),
        "voxel_size": spec.voxel_size,
        "kappa": spec.kappa,
        "max_peaks": spec.max_peaks,
        "roi_depth": spec.roi_depth,
        "bundles": [
            {"name": b.name, "radius": b.radius, "head_roi": b.head_roi, "tail_roi": b.tail_roi,
             "points": b.centerline.tolist()}
            for b in spec.bundles
        ],
    }


# -- on-disk layout -------------------------------------------------------------

PHANTOM_FILES = {
    "fodf": "fodf.v1", "raw": "raw.v1", "peaks": "peaks.v1", "wm_mask": "wm.v1",
    "interface_mask": "interface.v1", "fa": "fa.v1", "rois": "rois.v1",
}


def save_phantom(phantom, out_dir):
    """Write every volume as V1 plus ``phantom.json`` (resolved spec and ground truth)."""
    import json
    import os

    from .streamlines import save_s1
    from .volume import save_v1

    os.makedirs(out_dir, exist_ok=True)
    for attr, name in PHANTOM_FILES.items():
        save_v1(os.path.join(out_dir, name), getattr(phantom, attr))
    masks = []
    for i, (bname, m) in enumerate(zip(phantom.bundle_names, phantom.bundle_masks)):
        fname = f"bundle{i}.v1"
        save_v1(os.path.join(out_dir, fname), m)
        masks.append({"name": bname, "file": fname})
    pairs = sorted([sorted(int(x) for x in k) + [int(v)] for k, v in phantom.valid_pairs.items()],
                   key=lambda p: p[2])
    doc = {"spec": phantom_spec_to_dict(phantom.spec), "bundles": masks, "valid_pairs": pairs}
    with open(os.path.join(out_dir, "phantom.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    save_s1(os.path.join(out_dir, "centerlines.s1"), phantom.centerlines(step=1.0))


def load_phantom(path):
    """Read a directory written by ``save_phantom``."""
    import json
    import os

    from .volume import load_v1

    meta_path = os.path.join(path, "phantom.json")
    if not os.path.isfile(meta_path):
        raise FileNotFoundError(f"{path}: no phantom.json (not a phantom directory)")
    with open(meta_path) as fh:
        doc = json.load(fh)
    try:
        vols = {attr: load_v1(os.path.join(path, name)) for attr, name in PHANTOM_FILES.items()}
        masks = [load_v1(os.path.join(path, b["file"])) for b in doc["bundles"]]
        names = [b["name"] for b in doc["bundles"]]
        pairs = {frozenset((int(a), int(b))): int(i) for a, b, i in doc["valid_pairs"]}
        spec = phantom_spec_from_dict(doc["spec"])
    except (KeyError, TypeError) as exc:
        raise PhantomError(f"{meta_path}: malformed ({exc})") from None
    dims = vols["wm_mask"].dims
    for attr, v in list(vols.items()) + [(f"bundle {n}", m) for n, m in zip(names, masks)]:
        if tuple(v.dims) != tuple(dims):
            raise PhantomError(f"{path}: {attr} has dims {tuple(v.dims)}, expected {tuple(dims)}")
    return Phantom(spec=spec, bundle_masks=masks, bundle_names=names, valid_pairs=pairs, **vols)
