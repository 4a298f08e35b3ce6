"""S1 streamline files.

Layout: the 8-byte magic ``TRSTRM01``, a little-endian u32 streamline count,
then for each streamline a u32 point count followed by that many float32
(x, y, z) triples in world millimetres.
"""
import struct

import numpy as np

MAGIC = b"TRSTRM01"


class StreamlineFileError(ValueError):
    pass


def save_s1(path, streamlines):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(streamlines)))
        for s in streamlines:
            pts = np.asarray(s, dtype="<f4").reshape(-1, 3)
            fh.write(struct.pack("<I", len(pts)))
            fh.write(pts.tobytes())


def load_s1(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise StreamlineFileError(f"{path}: not an S1 streamline file")
    if len(raw) < 12:
        raise StreamlineFileError(f"{path}: truncated header")
    (count,) = struct.unpack_from("<I", raw, 8)
    pos = 12
    out = []
    for _ in range(count):
        if pos + 4 > len(raw):
            raise StreamlineFileError(f"{path}: truncated at streamline {len(out)}")
        (n,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        end = pos + 12 * n
        if end > len(raw):
            raise StreamlineFileError(f"{path}: truncated at streamline {len(out)}")
        out.append(np.frombuffer(raw, dtype="<f4", count=3 * n, offset=pos).reshape(n, 3).astype(np.float64))
        pos = end
    if pos != len(raw):
        raise StreamlineFileError(f"{path}: {len(raw) - pos} trailing bytes")
    return out
