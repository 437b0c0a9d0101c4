"""Path persistence: a little-endian binary column file and a small CSV form.

Binary layout (all little-endian)::

    magic      8 bytes   b"ERGPATH1"
    flags      uint32    bit 0: diagnostic columns present
    reserved   uint32
    delta      float64
    N          uint64    number of steps (N + 1 values follow)
    seed       uint64
    gen_len    uint16    then gen_len bytes of UTF-8 generator id
    values     float64[N + 1]
    [brownian_increments, drift_integrals, noise_integrals]  float64[N] each

Large files are memory-mapped on load.
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .sde import PathSample

__all__ = ["save_path", "load_path", "save_path_csv", "load_path_csv", "atomic_write"]

MAGIC = b"ERGPATH1"
_HEAD = struct.Struct("<8sIIdQQH")
_F8 = np.dtype("<f8")


def atomic_write(path, writer, mode: str = "w") -> None:
    """Call ``writer(fh)`` on a temp file next to ``path``, then rename it over."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"newline": ""})) as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_path(path: PathSample, filename) -> None:
    gen = path.generator_id.encode("utf-8")
    flags = 1 if path.diagnostic else 0

    def write(fh):
        fh.write(_HEAD.pack(MAGIC, flags, 0, float(path.delta), path.N,
                            int(path.seed) & ((1 << 64) - 1), len(gen)))
        fh.write(gen)
        fh.write(np.ascontiguousarray(path.values, dtype=_F8).tobytes())
        if flags:
            for col in (path.brownian_increments, path.drift_integrals, path.noise_integrals):
                fh.write(np.ascontiguousarray(col, dtype=_F8).tobytes())

    atomic_write(filename, write, "wb")


def load_path(filename, mmap: bool = True) -> PathSample:
    with open(filename, "rb") as fh:
        head = fh.read(_HEAD.size)
        if len(head) < _HEAD.size:
            raise ValueError(f"{filename}: truncated header")
        magic, flags, _, delta, N, seed, glen = _HEAD.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{filename}: not an ergodrift path file")
        gen = fh.read(glen).decode("utf-8")
        offset = _HEAD.size + glen
    ncols = 4 if flags & 1 else 1
    expect = offset + 8 * ((N + 1) + (ncols - 1) * N)
    if os.path.getsize(filename) != expect:
        raise ValueError(f"{filename}: size mismatch (truncated or corrupt)")
    if mmap:
        data = np.memmap(filename, dtype=_F8, mode="r", offset=offset)
    else:
        data = np.fromfile(filename, dtype=_F8, offset=offset)
    values = data[: N + 1]
    cols = [None, None, None]
    if flags & 1:
        for k in range(3):
            a = N + 1 + k * N
            cols[k] = data[a: a + N]
    return PathSample(
        delta=delta, values=values, seed=seed, generator_id=gen,
        brownian_increments=cols[0], drift_integrals=cols[1], noise_integrals=cols[2],
    )


def save_path_csv(path: PathSample, filename) -> None:
    """Columns ``t, y``; meant for small N (plotting, inspection)."""
    def write(fh):
        w = csv.writer(fh)
        w.writerow(["t", "y"])
        for j, y in enumerate(path.values):
            w.writerow([format(j * path.delta, ".17g"), format(float(y), ".17g")])

    atomic_write(filename, write)


def load_path_csv(filename, seed: int = 0) -> PathSample:
    arr = np.loadtxt(filename, delimiter=",", skiprows=1, ndmin=2)
    t, y = arr[:, 0], arr[:, 1]
    delta = float(t[1]) if len(t) > 1 else 1.0  # t_1 = delta, written exactly
    return PathSample(delta=delta, values=y, seed=seed, generator_id="csv")
