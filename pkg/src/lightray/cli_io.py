"""Command line, configuration files, binary grid files and CSV reports.

LRTK binary layout (all little-endian)::

    b"LRTK"                    magic
    u32 version                currently 1
    u32 dtype code             1 = float64, 2 = complex128
    u32 axis count
    per axis: u64 dim, f64 origin, f64 spacing
    payload                    row-major values
    16-byte checksum           two u64 words (S1, S2)

The checksum runs over every preceding byte, zero-padded to a multiple of 4
and read as u32 words ``w_1 .. w_K``: ``S1 = sum w_i`` and
``S2 = sum (K - i + 1) w_i`` (a Fletcher-style running sum), both modulo 2^64.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import os
import struct
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import fft as sfft

from .errors import (FormatError, IntegrationError, InvalidInputError, LightRayError,
                     NoSolutionError, SingularJacobianError, UnsupportedOrderError)
from .fields import GridField

VERSION = "0.1.0"
MAGIC = b"LRTK"
FORMAT_VERSION = 1
DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<c16")}
CODES = {np.dtype("<f8"): 1, np.dtype("<c16"): 2}


class UnsupportedVersionError(FormatError):
    """File written by a newer format version."""


class NumericalFailure(LightRayError, RuntimeError):
    """A pipeline ran but missed its numerical tolerance."""


# ---------------------------------------------------------------------------
# binary grid files
# ---------------------------------------------------------------------------

def _checksum(buf: bytes) -> bytes:
    pad = (-len(buf)) % 4
    w = np.frombuffer(buf + b"\0" * pad, dtype="<u4").astype(np.uint64)
    K = len(w)
    with np.errstate(over="ignore"):
        s1 = np.sum(w, dtype=np.uint64)
        coef = np.arange(K, 0, -1, dtype=np.uint64)
        s2 = np.sum(w * coef, dtype=np.uint64)
    return struct.pack("<QQ", int(s1), int(s2))


def encode_array(values: np.ndarray, origin, spacing) -> bytes:
    values = np.asarray(values)
    dt = np.dtype("<c16") if np.iscomplexobj(values) else np.dtype("<f8")
    values = np.ascontiguousarray(values, dtype=dt)
    origin = np.broadcast_to(np.asarray(origin, float), (values.ndim,))
    spacing = np.broadcast_to(np.asarray(spacing, float), (values.ndim,))
    head = MAGIC + struct.pack("<III", FORMAT_VERSION, CODES[dt], values.ndim)
    for d, o, s in zip(values.shape, origin, spacing):
        head += struct.pack("<Qdd", int(d), float(o), float(s))
    body = head + values.tobytes()
    return body + _checksum(body)


def decode_array(buf: bytes, expect_dtype=None):
    """Parse an LRTK buffer into ``(values, origin, spacing)``."""
    if len(buf) < 16 + 16 or buf[:4] != MAGIC:
        raise FormatError("bad magic bytes")
    version, code, ndim = struct.unpack_from("<III", buf, 4)
    if version > FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version} is newer than {FORMAT_VERSION}")
    if version < 1:
        raise FormatError(f"invalid format version {version}")
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dt = DTYPES[code]
    if expect_dtype is not None and np.dtype(expect_dtype).newbyteorder("<") != dt:
        raise TypeError(f"file holds {dt}, expected {np.dtype(expect_dtype)}")
    pos = 16
    dims, origin, spacing = [], [], []
    for _ in range(ndim):
        if pos + 24 > len(buf):
            raise FormatError("truncated header")
        d, o, s = struct.unpack_from("<Qdd", buf, pos)
        dims.append(d)
        origin.append(o)
        spacing.append(s)
        pos += 24
    nbytes = int(np.prod(dims)) * dt.itemsize if dims else 0
    if len(buf) != pos + nbytes + 16:
        raise FormatError(f"payload size mismatch: expected {pos + nbytes + 16} bytes, got {len(buf)}")
    if _checksum(buf[:pos + nbytes]) != buf[pos + nbytes:]:
        raise FormatError("checksum mismatch")
    values = np.frombuffer(buf, dtype=dt, count=int(np.prod(dims)), offset=pos).reshape(dims).copy()
    return values, np.array(origin), np.array(spacing)


def write_grid(f: GridField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_array(f.values, f.origin, f.spacing))


def read_grid(path, expect_dtype=None) -> GridField:
    with open(path, "rb") as fh:
        buf = fh.read()
    values, origin, spacing = decode_array(buf, expect_dtype)
    return GridField(values, origin, spacing)


def write_ray_data(u, path) -> None:
    """Ray data as an LRTK array: axis 0 indexes directions, then base-point axes."""
    fam = u.family
    origin = np.concatenate([[0.0], fam.z_origin])
    spacing = np.concatenate([[1.0], fam.z_spacing])
    with open(path, "wb") as fh:
        fh.write(encode_array(u.values, origin, spacing))


def read_ray_data(path, family):
    from .ray_transform import RayData

    with open(path, "rb") as fh:
        values, _, _ = decode_array(fh.read())
    return RayData(family, values)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def parse_config(text: str) -> dict:
    """``key = value`` lines with dotted keys; ``#`` starts a comment."""
    out = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"config line {ln}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise InvalidInputError(f"config line {ln}: empty key")
        out[k] = v
    return out


def _num(v):
    try:
        return int(v)
    except ValueError:
        return float(v)


def _vec(v):
    return [_num(s) for s in str(v).split(",") if s.strip()]


@dataclass
class RunConfig:
    metric: str = "minkowski"
    metric_params: dict = field(default_factory=dict)
    n: int = 2
    dims: Optional[list] = None
    spacing: Optional[list] = None
    origin: Optional[list] = None
    directions: Optional[int] = None
    rule: Optional[str] = None
    interp: str = "linear"
    operator: str = "multiplier"
    band: tuple = (0.4, 0.8)
    tolerances: dict = field(default_factory=dict)
    input: Optional[str] = None
    out: Optional[str] = None
    seed: int = 0
    fast: bool = False
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def canonical(self) -> str:
        items = dict(metric=self.metric, metric_params=sorted(self.metric_params.items()),
                     n=self.n, dims=self.dims, spacing=self.spacing, origin=self.origin,
                     directions=self.directions, rule=self.rule, interp=self.interp,
                     operator=self.operator, band=list(self.band),
                     tolerances=sorted(self.tolerances.items()), input=self.input,
                     seed=self.seed, fast=self.fast, extra=sorted(self.extra.items()))
        return repr(sorted(items.items()))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def grid(self) -> GridField:
        from .microlocal_probe import centered_grid

        n = self.n
        dims = self.dims or [32 if self.fast else 64] * (n + 1)
        if len(dims) == 1:
            dims = dims * (n + 1)
        spacing = self.spacing or [1.0]
        g = centered_grid(n, dims, spacing if len(spacing) > 1 else spacing[0])
        if self.origin:
            g.origin = np.broadcast_to(np.asarray(self.origin, float), (n + 1,)).copy()
        return g


def config_from_mapping(m: dict) -> RunConfig:
    cfg = RunConfig()
    known = {"metric.name", "n", "grid.dims", "grid.spacing", "grid.origin", "rays.directions",
             "rays.rule", "rays.interp", "operator", "field.band", "input", "out", "seed",
             "fast", "threads"}
    for k, v in m.items():
        if k == "metric.name":
            cfg.metric = v
        elif k.startswith("metric."):
            p = k.split(".", 1)[1]
            cfg.metric_params[p] = _vec(v) if "," in v else _num(v)
        elif k == "n":
            cfg.n = int(v)
        elif k == "grid.dims":
            cfg.dims = [int(x) for x in _vec(v)]
        elif k == "grid.spacing":
            cfg.spacing = [float(x) for x in _vec(v)]
        elif k == "grid.origin":
            cfg.origin = [float(x) for x in _vec(v)]
        elif k == "rays.directions":
            cfg.directions = int(v)
        elif k == "rays.rule":
            cfg.rule = v
        elif k == "rays.interp":
            cfg.interp = v
        elif k == "operator":
            cfg.operator = v
        elif k == "field.band":
            cfg.band = tuple(float(x) for x in _vec(v))
        elif k.startswith("tol."):
            cfg.tolerances[k[4:]] = float(v)
        elif k == "input":
            cfg.input = v
        elif k == "out":
            cfg.out = v
        elif k == "seed":
            cfg.seed = int(v)
        elif k == "fast":
            cfg.fast = v.lower() in ("1", "true", "yes")
        elif k == "threads":
            cfg.threads = int(v)
        elif k not in known:
            cfg.extra[k] = v
    if cfg.n < 2:
        raise InvalidInputError("n must be >= 2")
    if cfg.dims and any(d <= 0 for d in cfg.dims):
        raise InvalidInputError("grid dims must be positive")
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_mapping(parse_config(fh.read()))


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def _rows_of(report):
    from .microlocal_probe import DecayReport, SobolevFit
    from .normal_operator import CrossValidationReport
    from .spacetime_geometry import ConjugateRecord

    if isinstance(report, DecayReport):
        cols = ["band", "energy", "slope", "halfwidth", "verdict"]
        return cols, list(report.rows())
    if isinstance(report, CrossValidationReport):
        cols = ["pair", "total", "band_lo", "band_hi", "band"]
        return cols, list(report.rows())
    if isinstance(report, SobolevFit):
        cols = ["band", "ratio", "gain", "residual"]
        rows = [dict(band=b, ratio=r, gain=report.gain, residual=report.residual)
                for b, r in zip(report.bands, report.ratios)]
        return cols, rows
    if isinstance(report, (list, tuple)) and all(isinstance(r, ConjugateRecord) for r in report):
        cols = ["x", "theta", "s", "kernel_dim", "fold"]
        rows = [dict(x=" ".join(f"{v:.17g}" for v in r.x),
                     theta=" ".join(f"{v:.17g}" for v in r.theta),
                     s=r.s, kernel_dim=r.kernel_dim, fold=int(r.fold)) for r in report]
        return cols, rows
    if isinstance(report, dict) and "columns" in report:
        return list(report["columns"]), list(report["rows"])
    raise InvalidInputError(f"cannot export {type(report).__name__} as CSV")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def export_csv(report, path, config_hash: str = "none", seed: int = 0) -> int:
    """Write ``report`` as UTF-8 CSV with a ``#`` provenance line; returns 0."""
    cols, rows = _rows_of(report)
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash} seed={seed} version={VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in cols])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    return 0


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

COMMANDS = ("forward", "adjoint", "normal", "invert", "trace", "conjugates", "probe",
            "invisible", "selftest")

USAGE = ("usage: lightray {" + ",".join(COMMANDS) + "} [--config PATH] [--out PATH] "
         "[--n {2,3}] [--metric NAME[,k=v...]] [--fast] [--threads K] [--seed U64]")


def _parser():
    p = argparse.ArgumentParser(prog="lightray", add_help=True)
    p.add_argument("command")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--n", type=int)
    p.add_argument("--metric")
    p.add_argument("--fast", action="store_true")
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--input")
    return p


def _parse_metric(text):
    parts = text.split(",")
    params = {}
    for p in parts[1:]:
        if "=" not in p:
            raise InvalidInputError(f"metric parameter {p!r} must be key=value")
        k, v = p.split("=", 1)
        params[k.strip()] = _num(v.strip())
    return parts[0].strip(), params


def build_config(args) -> RunConfig:
    if args.config:
        if not os.path.exists(args.config):
            raise InvalidInputError(f"config file {args.config} does not exist")
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    if args.n is not None:
        cfg.n = args.n
    if args.metric:
        cfg.metric, cfg.metric_params = _parse_metric(args.metric)
    if args.fast:
        cfg.fast = True
    if args.threads is not None:
        if args.threads < 1:
            raise InvalidInputError("--threads must be positive")
        cfg.threads = args.threads
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise InvalidInputError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.out:
        cfg.out = args.out
    if args.input:
        cfg.input = args.input
    return cfg


def _metric(cfg):
    from .spacetime_geometry import metric_from_name

    return metric_from_name(cfg.metric, cfg.n, **cfg.metric_params)


def _field(cfg, grid=None):
    from .microlocal_probe import band_limited_field

    if cfg.input:
        return read_grid(cfg.input)
    g = cfg.grid() if grid is None else grid
    f = band_limited_field(cfg.n, g.dims, cfg.band, seed=cfg.seed % (2 ** 32),
                           spacing=g.spacing)
    return f


def _out(cfg, default):
    return cfg.out or default


def _family(cfg, metric, f):
    from .ray_transform import family_for_grid

    m = cfg.directions or (2 * max(f.dims[1:]) if cfg.n == 2 else 200)
    return family_for_grid(metric, f, m, cfg.rule, cfg.interp)


def _cmd_forward(cfg):
    from .ray_transform import forward

    metric = _metric(cfg)
    f = _field(cfg)
    rays = _family(cfg, metric, f)
    u = forward(metric, f, rays)
    write_ray_data(u, _out(cfg, "forward.lrtk"))
    return 0


def _cmd_adjoint(cfg):
    from .ray_transform import adjoint

    metric = _metric(cfg)
    g = cfg.grid()
    rays = _family(cfg, metric, g)
    if not cfg.input:
        raise InvalidInputError("adjoint needs --input with ray data")
    u = read_ray_data(cfg.input, rays)
    mode = cfg.extra.get("adjoint.mode", "discrete")
    write_grid(adjoint(metric, u, g, mode), _out(cfg, "adjoint.lrtk"))
    return 0


def _cmd_normal(cfg):
    from .normal_operator import (MultiplierSymbol, apply_multiplier, cross_validate,
                                  kernel_apply_static)
    from .ray_transform import normal_compose

    metric = _metric(cfg)
    f = _field(cfg)
    op = cfg.operator
    if op == "cross":
        names = cfg.extra.get("realizations", "multiplier,kernel,compose").split(",")
        rays = _family(cfg, metric, f) if "compose" in names else None
        rep = cross_validate(metric, f, names, rays=rays)
        export_csv(rep, _out(cfg, "cross.csv"), cfg.hash(), cfg.seed)
        tol = cfg.tolerances.get("cross", 0.05)
        return 0 if rep.max_discrepancy() <= tol else 3
    if op == "multiplier":
        if metric.kind != "minkowski":
            raise InvalidInputError("the multiplier realization needs a Minkowski metric")
        g = apply_multiplier(f, MultiplierSymbol(cfg.n))
    elif op == "kernel":
        g = kernel_apply_static(metric, f)
    elif op == "compose":
        g = normal_compose(metric, f, _family(cfg, metric, f))
    else:
        raise InvalidInputError(f"unknown operator {op!r}")
    write_grid(g, _out(cfg, "normal.lrtk"))
    return 0


def _cmd_invert(cfg):
    from .parametrix import ParametrixConfig, apply_H, recover
    from .ray_transform import forward

    if cfg.n not in (2, 3):
        raise UnsupportedOrderError("parametrix supports n=2,3")
    pc = ParametrixConfig(cfg.n)
    metric = _metric(cfg)
    f = _field(cfg)
    rays = _family(cfg, metric, f)
    u = forward(metric, f, rays, flag_truncation=False)
    rec = recover(metric, u, rays, pc, f)
    write_grid(rec, _out(cfg, "invert.lrtk"))
    H = apply_H(f, pc).values
    c = max(1, min(f.dims) // 8)
    sl = tuple(slice(c, d - c) for d in f.dims)
    err = np.linalg.norm(rec.values[sl] - H[sl]) / np.linalg.norm(H[sl])
    tol = cfg.tolerances.get("parametrix", 0.05)
    print(f"relative error against H f: {err:.4e} (tolerance {tol:g})")
    return 0 if err <= tol else 3


def _cmd_trace(cfg):
    from .spacetime_geometry import PhasePoint, integrate_bicharacteristic, null_covector

    metric = _metric(cfg)
    n = cfg.n
    x0 = np.array(_vec(cfg.extra.get("trace.x", ",".join(["0"] * n))), float)
    th = np.array(_vec(cfg.extra.get("trace.theta", ",".join(["1"] + ["0"] * (n - 1)))), float)
    s1 = float(cfg.extra.get("trace.s", "5"))
    tau, xi, _ = null_covector(metric, 0.0, x0, th)
    b = integrate_bicharacteristic(metric, PhasePoint(0.0, x0, float(tau), xi), (0.0, s1),
                                   s_eval=np.linspace(0, s1, 101))
    cols = ["s", "t"] + [f"x{i + 1}" for i in range(n)] + ["tau"] + [f"xi{i + 1}" for i in range(n)]
    rows = [dict(zip(cols, [s] + list(p))) for s, p in zip(b.s, b.points)]
    export_csv(dict(columns=cols, rows=rows), _out(cfg, "trace.csv"), cfg.hash(), cfg.seed)
    tol = cfg.tolerances.get("hamiltonian", 1e-9)
    z2 = float(tau) ** 2 + float(xi @ xi)
    return 0 if b.drift <= tol * (1 + z2) else 3


def _cmd_conjugates(cfg):
    from .spacetime_geometry import conjugate_scan

    metric = _metric(cfg)
    n = cfg.n
    x0 = np.array(_vec(cfg.extra.get("scan.x", ",".join(["0"] * n))), float)
    count = int(cfg.extra.get("scan.directions", "8"))
    s_max = float(cfg.extra.get("scan.s_max", "4"))
    recs = []
    for k in range(count):
        a = 2 * np.pi * k / count
        th = np.zeros(n)
        th[0], th[1] = np.cos(a), np.sin(a)
        found, _ = conjugate_scan(metric, x0, th, s_max)
        recs.extend(found)
    export_csv(recs, _out(cfg, "conjugates.csv"), cfg.hash(), cfg.seed)
    return 0


def _cmd_probe(cfg):
    from .microlocal_probe import ConormalSpec, synthesize, wf_decay_probe

    g = cfg.grid()
    if cfg.input:
        f = read_grid(cfg.input)
    else:
        n = cfg.n
        normal = np.zeros(n + 1)
        normal[1] = 1.0
        mu = float(cfg.extra.get("probe.order", "0"))
        half = 0.3 * float(np.min((np.array(g.dims) - 1) * g.spacing))
        spec = ConormalSpec("hyperplane", mu, normal, 0.0, window=(np.zeros(n + 1), half))
        f = synthesize(spec, g)
    d = np.array(_vec(cfg.extra.get("probe.direction", ",".join(["0", "1"] + ["0"] * (cfg.n - 1)))))
    rep = wf_decay_probe(f, np.zeros(cfg.n + 1), d)
    export_csv(rep, _out(cfg, "probe.csv"), cfg.hash(), cfg.seed)
    return 0


def _cmd_invisible(cfg):
    from . import acceptance

    res = acceptance.light_like_cancellation(fast=cfg.fast)
    rows = [dict(name=r.name, value=r.value, threshold=r.threshold, passed=int(r.passed))
            for r in res]
    export_csv(dict(columns=["name", "value", "threshold", "passed"], rows=rows),
               _out(cfg, "invisible.csv"), cfg.hash(), cfg.seed)
    return 0


def _cmd_selftest(cfg):
    from . import acceptance

    results = acceptance.run_all(fast=cfg.fast)
    width = max(len(r.name) for r in results)
    print(f"{'criterion'.ljust(width)}  {'value':>12}  {'threshold':>12}  result")
    for r in results:
        print(f"{r.name.ljust(width)}  {r.value:>12.4e}  {r.threshold:>12.4e}  "
              f"{'PASS' if r.passed else 'FAIL'}")
    if cfg.out:
        rows = [dict(name=r.name, value=r.value, threshold=r.threshold, passed=int(r.passed))
                for r in results]
        export_csv(dict(columns=["name", "value", "threshold", "passed"], rows=rows),
                   cfg.out, cfg.hash(), cfg.seed)
    return 0 if all(r.passed for r in results) else 3


_DISPATCH = {
    "forward": _cmd_forward, "adjoint": _cmd_adjoint, "normal": _cmd_normal,
    "invert": _cmd_invert, "trace": _cmd_trace, "conjugates": _cmd_conjugates,
    "probe": _cmd_probe, "invisible": _cmd_invisible, "selftest": _cmd_selftest,
}


def run_command(argv) -> int:
    """Run one command; exit status 0 ok, 1 usage, 2 invalid input, 3 numerical failure."""
    argv = list(argv)
    if not argv or argv[0] not in COMMANDS:
        print(USAGE, file=sys.stderr)
        return 1
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    try:
        cfg = build_config(args)
        # FFT workers split independent 1-D transforms, so results do not
        # depend on the count
        with sfft.set_workers(cfg.threads):
            return _DISPATCH[args.command](cfg)
    except (InvalidInputError, UnsupportedOrderError, FormatError, TypeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (IntegrationError, NoSolutionError, SingularJacobianError, NumericalFailure,
            FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
