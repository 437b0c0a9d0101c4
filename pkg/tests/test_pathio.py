import os

import numpy as np
import pytest

from ergodrift.pathio import atomic_write, load_path, load_path_csv, save_path, save_path_csv
from ergodrift.sde import simulate_path


@pytest.mark.parametrize("diag", [False, True])
def test_binary_round_trip(ou, tmp_path, diag):
    p = simulate_path(ou, 3.0, 0.01, seed=77, record_brownian=diag)
    f = tmp_path / "p.bin"
    save_path(p, f)
    q = load_path(f)
    assert q.delta == p.delta and q.seed == 77 and q.generator_id == p.generator_id
    assert np.array_equal(q.values, p.values)
    assert q.diagnostic == diag
    if diag:
        assert np.array_equal(q.noise_integrals, p.noise_integrals)
    assert np.array_equal(load_path(f, mmap=False).values, p.values)


def test_binary_header_is_little_endian(ou, tmp_path):
    p = simulate_path(ou, 1.0, 0.25, seed=1)
    f = tmp_path / "p.bin"
    save_path(p, f)
    raw = f.read_bytes()
    assert raw[:8] == b"ERGPATH1"
    assert np.frombuffer(raw[16:24], "<f8")[0] == 0.25
    assert np.frombuffer(raw[24:32], "<u8")[0] == 4


def test_corrupt_files(ou, tmp_path):
    p = simulate_path(ou, 1.0, 0.1, seed=1)
    f = tmp_path / "p.bin"
    save_path(p, f)
    data = f.read_bytes()
    (tmp_path / "short.bin").write_bytes(data[:-8])
    with pytest.raises(ValueError, match="size mismatch"):
        load_path(tmp_path / "short.bin")
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(ValueError, match="not an ergodrift"):
        load_path(tmp_path / "bad.bin")


def test_csv_round_trip(ou, tmp_path):
    p = simulate_path(ou, 1.0, 0.01, seed=9)
    f = tmp_path / "p.csv"
    save_path_csv(p, f)
    q = load_path_csv(f)
    assert q.delta == p.delta
    assert np.array_equal(q.values, p.values)
    assert f.read_text().splitlines()[0] == "t,y"


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    target = tmp_path / "out.txt"

    def boom(fh):
        fh.write("partial")
        raise RuntimeError("interrupted")

    with pytest.raises(RuntimeError):
        atomic_write(target, boom)
    assert os.listdir(tmp_path) == []
    atomic_write(target, lambda fh: fh.write("ok"))
    assert target.read_text() == "ok"
