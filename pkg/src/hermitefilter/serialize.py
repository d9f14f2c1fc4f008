"""File formats: coefficient CSV, matrix binary/CSV, window-bank binary, series CSVs.

Floats in CSV files are written with ``repr`` (shortest round-trip
decimal), so reading a file back gives bit-identical values.

Window-bank binary layout (little-endian)::

    b"HFKE"  u32 version  i64 J+1  i64 N+1  f64 alpha  f64 L_w  f64 overlap  f64 dt_obs
    [version 2 only: i64 n_intervals]
    per window: f64 beta_j, then n_intervals * (N+1)^2 f64, row-major
    trailer: u8 killing (0 correction, 1 propagator), f64 shift_threshold,
             f64 tolerance, i64 correction_nodes, f64 domain_lo, f64 domain_hi
             (NaN when the bank has no declared domain)

Version 1 stores one matrix per window; version 2 stores a table of
``n_intervals`` matrices per window (time-varying models).
"""

import csv
import hashlib
import io
import struct
from pathlib import Path as FsPath

import numpy as np

from .basis import BasisSpec, CoeffVector, gauss_hermite_rule
from .errors import BankFormatError
from .nlf import KILLING_MODES, Window, WindowBank

MAGIC = b"HFKE"
_HEAD = struct.Struct("<4sIqqdddd")
_TRAILER = struct.Struct("<Bddqdd")


def _fmt(v):
    return repr(float(v))


def _write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def coeffs_to_csv(coeffs, path):
    """Header ``alpha,beta,n_modes``, a line with those values, then one coefficient per line."""
    s = coeffs.spec
    lines = ["alpha,beta,n_modes", f"{_fmt(s.alpha)},{_fmt(s.beta)},{s.n_modes}"]
    lines += [_fmt(v) for v in coeffs.values]
    _write_text(path, "\n".join(lines) + "\n")


def coeffs_from_csv(path):
    with open(path) as fh:
        rows = [ln.strip() for ln in fh if ln.strip()]
    if len(rows) < 2 or rows[0] != "alpha,beta,n_modes":
        raise ValueError(f"{path}: not a coefficient file")
    a, b, n = rows[1].split(",")
    spec = BasisSpec(float(a), float(b), int(n))
    values = np.array([float(r) for r in rows[2:]])
    if values.size != spec.size:
        raise ValueError(f"{path}: expected {spec.size} coefficients, found {values.size}")
    return CoeffVector(spec, values)


def matrix_to_bytes(M, spec):
    M = np.ascontiguousarray(M, dtype="<f8")
    n = spec.size
    if M.shape != (n, n):
        raise ValueError(f"matrix shape {M.shape} does not match N+1={n}")
    return struct.pack("<qdd", n, spec.alpha, spec.beta) + M.tobytes(order="C")


def matrix_from_bytes(data):
    head = struct.calcsize("<qdd")
    if len(data) < head:
        raise ValueError("matrix file truncated")
    n, alpha, beta = struct.unpack_from("<qdd", data)
    if n <= 0 or len(data) != head + 8 * n * n:
        raise ValueError(f"matrix file size {len(data)} does not match N+1={n}")
    M = np.frombuffer(data, dtype="<f8", offset=head).reshape(n, n).astype(float)
    return M, BasisSpec(alpha, beta, n - 1)


def save_matrix(path, M, spec):
    FsPath(path).write_bytes(matrix_to_bytes(M, spec))


def load_matrix(path):
    return matrix_from_bytes(FsPath(path).read_bytes())


def matrix_to_csv(path, M):
    """Debug dump: one row per line."""
    _write_text(path, "".join(",".join(_fmt(v) for v in row) + "\n" for row in np.asarray(M)))


def _window_table(w):
    P = w.propagator
    return P[None] if P.ndim == 2 else P


def bank_to_bytes(bank):
    spec = bank.spec
    n = spec.size
    tables = [_window_table(w) for w in bank.windows]
    n_int = tables[0].shape[0]
    if any(t.shape != (n_int, n, n) for t in tables):
        raise BankFormatError("windows have inconsistent propagator shapes")
    version = 1 if bank.windows[0].propagator.ndim == 2 else 2
    out = io.BytesIO()
    out.write(_HEAD.pack(MAGIC, version, len(tables), n, spec.alpha, bank.half_width, bank.overlap, bank.dt_obs))
    if version == 2:
        out.write(struct.pack("<q", n_int))
    entries = 0
    for w, t in zip(bank.windows, tables):
        out.write(struct.pack("<d", w.beta))
        out.write(np.ascontiguousarray(t, dtype="<f8").tobytes(order="C"))
        entries += t.size
    if entries != bank.storage or entries != len(tables) * n_int * n * n:
        raise BankFormatError(f"stored {entries} entries, expected {bank.storage}")
    lo, hi = bank.domain if bank.domain is not None else (np.nan, np.nan)
    out.write(
        _TRAILER.pack(
            KILLING_MODES.index(bank.killing),
            bank.shift_threshold,
            bank.tolerance,
            bank.windows[0].rule.size,
            lo,
            hi,
        )
    )
    return out.getvalue()


def bank_from_bytes(data, stepper=None):
    if len(data) < _HEAD.size or data[:4] != MAGIC:
        raise BankFormatError("not a window-bank file (bad magic)")
    magic, version, n_win, n, alpha, half_width, overlap, dt_obs = _HEAD.unpack_from(data)
    pos = _HEAD.size
    if version == 1:
        n_int = 1
    elif version == 2:
        (n_int,) = struct.unpack_from("<q", data, pos)
        pos += 8
    else:
        raise BankFormatError(f"unsupported bank version {version}")
    if n_win <= 0 or n <= 0 or n_int <= 0:
        raise BankFormatError("bank header has non-positive sizes")
    expected = pos + n_win * (8 + 8 * n_int * n * n) + _TRAILER.size
    if len(data) != expected:
        raise BankFormatError(f"bank file has {len(data)} bytes, header implies {expected}")
    killing_code, shift, tol, m, lo, hi = _TRAILER.unpack_from(data, expected - _TRAILER.size)
    if killing_code >= len(KILLING_MODES):
        raise BankFormatError(f"unknown killing mode code {killing_code}")
    rule = gauss_hermite_rule(int(m))
    windows = []
    for _ in range(n_win):
        (beta,) = struct.unpack_from("<d", data, pos)
        pos += 8
        count = n_int * n * n
        P = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(float)
        pos += 8 * count
        P = P.reshape(n, n) if version == 1 else P.reshape(n_int, n, n)
        windows.append(Window(BasisSpec(alpha, beta, n - 1), P, rule))
    kwargs = {} if stepper is None else {"stepper": stepper}
    return WindowBank(
        windows=tuple(windows),
        half_width=half_width,
        overlap=overlap,
        shift_threshold=shift,
        dt_obs=dt_obs,
        tolerance=tol,
        killing=KILLING_MODES[killing_code],
        domain=None if np.isnan(lo) else (lo, hi),
        **kwargs,
    )


def _digest(w):
    return hashlib.sha256(np.ascontiguousarray(_window_table(w), dtype="<f8").tobytes()).hexdigest()


def save_bank(bank, path, manifest=None):
    """Write the bank binary and a manifest CSV (``<path>.manifest.csv`` by default)."""
    path = FsPath(path)
    path.write_bytes(bank_to_bytes(bank))
    manifest = FsPath(manifest) if manifest else path.with_name(path.name + ".manifest.csv")
    lines = ["index,beta,n_intervals,entries,sha256"]
    for j, w in enumerate(bank.windows):
        t = _window_table(w)
        lines.append(f"{j},{_fmt(w.beta)},{t.shape[0]},{t.size},{_digest(w)}")
    _write_text(manifest, "\n".join(lines) + "\n")
    return path, manifest


def load_bank(path, manifest=None, stepper=None):
    """Read a bank; when a manifest is given (or sits next to the file) checksums are verified."""
    path = FsPath(path)
    bank = bank_from_bytes(path.read_bytes(), stepper)
    manifest = FsPath(manifest) if manifest else path.with_name(path.name + ".manifest.csv")
    if manifest.exists():
        with open(manifest, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) != bank.n_windows:
            raise BankFormatError(f"manifest lists {len(rows)} windows, bank has {bank.n_windows}")
        for row, w in zip(rows, bank.windows):
            if float(row["beta"]) != w.beta or row["sha256"] != _digest(w):
                raise BankFormatError(f"checksum mismatch for window {row['index']}")
    return bank


def write_csv(path, header, columns):
    """Columns of equal length; ints stay ints, floats use repr."""
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("columns have different lengths")

    def cell(v):
        if isinstance(v, (str, np.str_)):
            return str(v)
        if isinstance(v, (bool, np.bool_)):
            return str(int(v))
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return _fmt(v)

    lines = [",".join(header)]
    lines += [",".join(cell(c[i]) for c in cols) for i in range(n)]
    _write_text(path, "\n".join(lines) + "\n")


def read_csv(path):
    """Header and float columns of a CSV written by :func:`write_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
    return header, {h: data[:, i] for i, h in enumerate(header)}


def estimates_to_csv(result, path):
    write_csv(
        path,
        ["t", "mean", "mass", "window_index", "shift_count"],
        [result.times, result.mean, result.mass, result.window_index, result.shift_count],
    )


def snapshots_to_csv(result, path):
    """Long format: t, x, u_normalized for every snapshot."""
    t = np.repeat(result.snapshot_times, result.snapshot_grid.size)
    x = np.tile(result.snapshot_grid, result.snapshot_times.size)
    write_csv(path, ["t", "x", "u_normalized"], [t, x, result.snapshots.reshape(-1)])


def path_to_csv(path_obj, path):
    write_csv(path, ["t", "x", "y"], [path_obj.times, path_obj.x, path_obj.y])


def pf_to_csv(result, path):
    write_csv(path, ["t", "mean", "ess", "resampled"], [result.times, result.mean, result.ess, result.resampled])
