import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lightray.cli_io import (RunConfig, UnsupportedVersionError, config_from_mapping,
                             decode_array, encode_array, export_csv, parse_config, read_grid,
                             read_ray_data, run_command, write_grid, write_ray_data)
from lightray.errors import FormatError, InvalidInputError
from lightray.fields import GridField
from lightray.microlocal_probe import DecayReport, centered_grid
from lightray.ray_transform import RayData, family_for_grid
from lightray.spacetime_geometry import minkowski


def reference_checksum(buf):
    """Fletcher-style sums over little-endian u32 words, written out longhand."""
    buf = buf + b"\0" * ((-len(buf)) % 4)
    w = [struct.unpack_from("<I", buf, 4 * i)[0] for i in range(len(buf) // 4)]
    K = len(w)
    s1 = sum(w) % 2 ** 64
    s2 = sum((K - i) * x for i, x in enumerate(w)) % 2 ** 64
    return struct.pack("<QQ", s1, s2)


# ---------------------------------------------------------------------------
# binary format
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("complex_", [False, True])
def test_grid_round_trip_is_bit_exact(tmp_path, complex_):
    rng = np.random.default_rng(0)
    v = rng.standard_normal((5, 6, 7))
    if complex_:
        v = v + 1j * rng.standard_normal(v.shape)
    f = GridField(v, [0.1, -2.0, 3.5], [0.25, 0.5, 0.125])
    p = tmp_path / "f.lrtk"
    write_grid(f, p)
    g = read_grid(p)
    assert g.values.tobytes() == f.values.tobytes()
    assert np.array_equal(g.origin, f.origin) and np.array_equal(g.spacing, f.spacing)


def test_layout_matches_documented_bytes():
    v = np.arange(6, dtype=float).reshape(1, 2, 3)
    buf = encode_array(v, [0.0, 1.0, 2.0], [1.0, 0.5, 0.25])
    assert buf[:4] == b"LRTK"
    assert struct.unpack_from("<III", buf, 4) == (1, 1, 3)
    assert struct.unpack_from("<Qdd", buf, 16) == (1, 0.0, 1.0)
    assert struct.unpack_from("<Qdd", buf, 40) == (2, 1.0, 0.5)
    assert struct.unpack_from("<6d", buf, 88) == tuple(range(6))
    assert len(buf) == 88 + 48 + 16
    assert buf[-16:] == reference_checksum(buf[:-16])


@settings(max_examples=40, deadline=None)
@given(st.binary(min_size=0, max_size=257))
def test_checksum_matches_reference(data):
    from lightray.cli_io import _checksum

    assert _checksum(data) == reference_checksum(data)


def test_truncated_payload(tmp_path):
    buf = encode_array(np.ones((3, 4, 4)), 0.0, 1.0)
    with pytest.raises(FormatError):
        decode_array(buf[:-20])
    with pytest.raises(FormatError):
        decode_array(buf[:30])


def test_future_version_and_bad_magic():
    buf = bytearray(encode_array(np.ones((2, 2, 2)), 0.0, 1.0))
    fut = bytes(buf[:4]) + struct.pack("<I", 2) + bytes(buf[8:])
    with pytest.raises(UnsupportedVersionError):
        decode_array(fut)
    with pytest.raises(FormatError):
        decode_array(b"XXXX" + bytes(buf[4:]))


def test_checksum_detects_flipped_bit():
    buf = bytearray(encode_array(np.ones((2, 3, 3)), 0.0, 1.0))
    buf[100] ^= 0x01
    with pytest.raises(FormatError):
        decode_array(bytes(buf))


def test_dtype_mismatch(tmp_path):
    p = tmp_path / "f.lrtk"
    write_grid(GridField(np.ones((3, 3, 3)), 0.0, 1.0), p)
    with pytest.raises(TypeError):
        read_grid(p, expect_dtype=np.complex128)
    read_grid(p, expect_dtype=np.float64)


def test_ray_data_round_trip(tmp_path):
    g = centered_grid(2, 7)
    fam = family_for_grid(minkowski(2), g, 8)
    u = RayData(fam, np.random.default_rng(1).standard_normal(fam.shape))
    p = tmp_path / "u.lrtk"
    write_ray_data(u, p)
    assert read_ray_data(p, fam).values.tobytes() == u.values.tobytes()


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_parse_config():
    text = """
    # a comment
    metric.name = static-bump
    metric.eps = 0.2     # trailing comment
    n = 2
    grid.dims = 16, 16, 16
    tol.parametrix = 0.02
    custom.key = hello
    """
    cfg = config_from_mapping(parse_config(text))
    assert cfg.metric == "static-bump" and cfg.metric_params == {"eps": 0.2}
    assert cfg.dims == [16, 16, 16] and cfg.tolerances == {"parametrix": 0.02}
    assert cfg.extra == {"custom.key": "hello"}
    with pytest.raises(InvalidInputError):
        parse_config("no equals sign")
    with pytest.raises(InvalidInputError):
        config_from_mapping({"grid.dims": "4, 0, 4"})


def test_config_hash_is_stable_and_sensitive():
    a, b = RunConfig(seed=3), RunConfig(seed=3)
    assert a.hash() == b.hash() and len(a.hash()) == 16
    assert RunConfig(seed=4).hash() != a.hash()
    # thread count and output path do not enter the hash
    assert RunConfig(seed=3, threads=4, out="x").hash() == a.hash()


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def _report(k):
    return DecayReport(np.geomspace(0.2, 3.2, k), np.ones(k), -1.0, 0.1, False, 0.0, 8.0, 0.26)


def test_csv_decay_report(tmp_path):
    p = tmp_path / "r.csv"
    assert export_csv(_report(5), p, "abc123", 7) == 0
    lines = p.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# config_hash=abc123 seed=7 version=")
    assert lines[1] == "band,energy,slope,halfwidth,verdict"
    assert len(lines) == 2 + 5


def test_csv_empty_conjugates(tmp_path):
    p = tmp_path / "c.csv"
    export_csv([], p)
    lines = p.read_text().splitlines()
    assert len(lines) == 2 and lines[1] == "x,theta,s,kernel_dim,fold"


def test_csv_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        export_csv(_report(4), tmp_path / "missing" / "r.csv")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def test_unknown_command(capsys):
    assert run_command(["bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run_command([]) == 1


def test_missing_config(tmp_path):
    assert run_command(["forward", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_invert_rejects_n4(capsys):
    assert run_command(["invert", "--n", "4"]) == 2
    assert "parametrix supports n=2,3" in capsys.readouterr().err


def test_bad_flags():
    assert run_command(["forward", "--threads", "0"]) == 2
    assert run_command(["forward", "--seed", "-1"]) == 2
    assert run_command(["forward", "--metric", "static-bump,eps"]) == 2


def test_unwritable_output_exits_nonzero(tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("grid.dims = 12\nrays.directions = 8\n")
    out = tmp_path / "nope" / "x.lrtk"
    assert run_command(["forward", "--config", str(cfg), "--out", str(out)]) == 2


def _small_cfg(tmp_path, extra=""):
    p = tmp_path / "run.cfg"
    p.write_text("n = 2\ngrid.dims = 16\nrays.directions = 12\nfield.band = 0.6, 1.2\n"
                 "seed = 5\n" + extra)
    return str(p)


def test_forward_is_deterministic_across_threads(tmp_path):
    cfg = _small_cfg(tmp_path)
    a, b = tmp_path / "a.lrtk", tmp_path / "b.lrtk"
    assert run_command(["forward", "--config", cfg, "--out", str(a), "--threads", "1"]) == 0
    assert run_command(["forward", "--config", cfg, "--out", str(b), "--threads", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_forward_then_adjoint(tmp_path):
    cfg = _small_cfg(tmp_path)
    u = tmp_path / "u.lrtk"
    g = tmp_path / "g.lrtk"
    assert run_command(["forward", "--config", cfg, "--out", str(u)]) == 0
    assert run_command(["adjoint", "--config", cfg, "--input", str(u), "--out", str(g)]) == 0
    assert read_grid(g).values.shape == (16, 16, 16)


def test_normal_commands(tmp_path):
    cfg = _small_cfg(tmp_path)
    for op in ("multiplier", "kernel", "compose"):
        c = _small_cfg(tmp_path, f"operator = {op}\n")
        out = tmp_path / f"{op}.lrtk"
        assert run_command(["normal", "--config", c, "--out", str(out)]) == 0
        assert os.path.getsize(out) > 0
    bad = _small_cfg(tmp_path, "operator = multiplier\n")
    assert run_command(["normal", "--config", bad, "--metric", "static-bump"]) == 2
    assert cfg


def test_trace_and_conjugates(tmp_path):
    t = tmp_path / "t.csv"
    assert run_command(["trace", "--metric", "gh-bump", "--out", str(t)]) == 0
    lines = t.read_text().splitlines()
    assert lines[0].startswith("# config_hash=") and len(lines) == 2 + 101
    c = tmp_path / "c.csv"
    assert run_command(["conjugates", "--metric", "minkowski", "--out", str(c)]) == 0
    assert len(c.read_text().splitlines()) == 2


def test_probe_command(tmp_path):
    p = tmp_path / "p.csv"
    cfg = tmp_path / "p.cfg"
    cfg.write_text("grid.dims = 128\n")
    assert run_command(["probe", "--config", str(cfg), "--out", str(p)]) == 0
    assert len(p.read_text().splitlines()) >= 2 + 4


@pytest.mark.slow
def test_selftest_fast(capsys):
    code = run_command(["selftest", "--fast"])
    out = capsys.readouterr().out
    assert "criterion" in out
    assert code == 0
