"""Sequential binary H-files and D-files, read distribution, striping model.

Both file kinds use Fortran-sequential record framing, little-endian::

    [u32 payload length][payload][u32 payload length]

H-file records, in order:

    header      "RMXH" u32 version=1, u32 n_channels, u32 n_poles,
                f64 pole_low, f64 pole_high, u64 boundary_seed, u64 hamiltonian_seed
    eigenvalues f64 x n_poles
    eigenvector columns, n_poles records of f64 x n_poles
    amplitude rows, n_channels records of f64 x n_poles

D-file records:

    header      "RMXD" u32 version=1, u32 n_initial_states, u32 n_poles,
                u64 x n_initial_states   byte offset of each state record
    one record per state: u32 state index, u32 rows, f64 x rows x n_poles
"""

from __future__ import annotations

import csv
import io
import os
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import CaseDefinition, EigenSystem, InvalidInput, RmxError, SurfaceAmplitudes

H_MAGIC = b"RMXH"
D_MAGIC = b"RMXD"
VERSION = 1

_MARK = struct.Struct("<I")
_H_HEADER = struct.Struct("<4sIIIddQQ")
_D_HEADER = struct.Struct("<4sIII")
_STATE_HEAD = struct.Struct("<II")

READ_MODES = ("all_ranks_read", "root_read_broadcast")
GiB = 1 << 30


class FormatError(RmxError):
    pass


class CorruptRecord(RmxError):
    pass


# -- record framing -------------------------------------------------------------


def _write_record(f, payload: bytes) -> int:
    f.write(_MARK.pack(len(payload)))
    f.write(payload)
    f.write(_MARK.pack(len(payload)))
    return len(payload) + 2 * _MARK.size


def _read_record(f, name: str, path) -> bytes:
    head = f.read(_MARK.size)
    if len(head) != _MARK.size:
        raise CorruptRecord(f"{path}: record '{name}': missing leading length marker")
    (n,) = _MARK.unpack(head)
    payload = f.read(n)
    if len(payload) != n:
        raise CorruptRecord(f"{path}: record '{name}': payload truncated ({len(payload)} of {n} bytes)")
    tail = f.read(_MARK.size)
    if len(tail) != _MARK.size:
        raise CorruptRecord(f"{path}: record '{name}': missing trailing length marker")
    (m,) = _MARK.unpack(tail)
    if m != n:
        raise CorruptRecord(f"{path}: record '{name}': framing mismatch ({n} vs {m})")
    return payload


def _f64(payload: bytes, count: int, name: str, path) -> np.ndarray:
    if len(payload) != 8 * count:
        raise CorruptRecord(f"{path}: record '{name}': expected {count} f64 values, got {len(payload)} bytes")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64)


def _as_le_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


# -- instrumented file layer ------------------------------------------------------


class CountingOpener:
    """``open`` replacement that counts opens per path; safe under concurrent use."""

    def __init__(self, opener: Callable = open):
        self._opener = opener
        self._lock = threading.Lock()
        self.opens: dict[str, int] = {}

    def __call__(self, path, mode="rb"):
        with self._lock:
            key = os.fspath(path)
            self.opens[key] = self.opens.get(key, 0) + 1
        return self._opener(path, mode)

    @property
    def total(self) -> int:
        with self._lock:
            return sum(self.opens.values())


# -- H-file -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HData:
    case: CaseDefinition
    eigensystem: EigenSystem
    amplitudes: SurfaceAmplitudes

    def bit_equal(self, other: "HData") -> bool:
        return (
            self.case == other.case
            and self.eigensystem.eigenvalues.tobytes() == other.eigensystem.eigenvalues.tobytes()
            and self.eigensystem.eigenvectors.tobytes() == other.eigensystem.eigenvectors.tobytes()
            and self.amplitudes.w.tobytes() == other.amplitudes.w.tobytes()
        )


def write_hfile(path, case: CaseDefinition, es: EigenSystem, amps: SurfaceAmplitudes) -> int:
    n, nchan = case.n_poles, case.n_channels
    if es.size != n or amps.w.shape != (nchan, n):
        raise InvalidInput(
            f"data does not match case: {es.size} eigenpairs, amplitudes {amps.w.shape}, "
            f"case {nchan}x{n}"
        )
    low, high = case.pole_energy_range
    total = 0
    record = "header"
    try:
        with open(path, "wb") as f:
            total += _write_record(
                f,
                _H_HEADER.pack(H_MAGIC, VERSION, nchan, n, low, high, case.boundary_seed, case.hamiltonian_seed),
            )
            record = "eigenvalues"
            total += _write_record(f, _as_le_bytes(es.eigenvalues))
            for k in range(n):
                record = f"eigenvector {k}"
                total += _write_record(f, _as_le_bytes(es.eigenvectors[:, k]))
            for i in range(nchan):
                record = f"amplitude row {i}"
                total += _write_record(f, _as_le_bytes(amps.w[i]))
    except OSError as exc:
        raise RmxError(f"{path}: write failed at record '{record}': {exc}") from exc
    return total


def _parse_hfile(f, path) -> HData:
    head = _read_record(f, "header", path)
    if len(head) != _H_HEADER.size:
        raise FormatError(f"{path}: header is {len(head)} bytes, expected {_H_HEADER.size}")
    magic, version, nchan, n, low, high, bseed, hseed = _H_HEADER.unpack(head)
    if magic != H_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    case = CaseDefinition(nchan, n, (low, high), boundary_seed=bseed, hamiltonian_seed=hseed)
    vals = _f64(_read_record(f, "eigenvalues", path), n, "eigenvalues", path)
    vecs = np.empty((n, n))
    for k in range(n):
        name = f"eigenvector {k}"
        vecs[:, k] = _f64(_read_record(f, name, path), n, name, path)
    w = np.empty((nchan, n))
    for i in range(nchan):
        name = f"amplitude row {i}"
        w[i] = _f64(_read_record(f, name, path), n, name, path)
    if f.read(1):
        raise CorruptRecord(f"{path}: trailing bytes after amplitude row {nchan - 1}")
    return HData(case, EigenSystem(vals, vecs), SurfaceAmplitudes(w))


def _load_hfile(path, opener) -> HData:
    with opener(path, "rb") as f:
        return _parse_hfile(f, path)


def read_hfile(path, mode: str = "root_read_broadcast", n_workers: int = 1, opener: Callable = open) -> list[HData]:
    """Per-worker copies of the H-file contents.

    ``root_read_broadcast`` opens the file once and hands every worker its
    own copy; ``all_ranks_read`` has each worker open and parse the file
    itself. Results are identical either way.
    """
    if mode not in READ_MODES:
        raise InvalidInput(f"unknown read mode {mode!r}; expected one of {READ_MODES}")
    if n_workers < 1:
        raise InvalidInput("n_workers must be >= 1")
    if mode == "root_read_broadcast":
        root = _load_hfile(path, opener)
        return [root] + [_broadcast_copy(root) for _ in range(n_workers - 1)]
    if n_workers == 1:
        return [_load_hfile(path, opener)]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(lambda _: _load_hfile(path, opener), range(n_workers)))


def _broadcast_copy(d: HData) -> HData:
    es = d.eigensystem
    return HData(d.case, EigenSystem(es.eigenvalues.copy(), es.eigenvectors.copy()), SurfaceAmplitudes(d.amplitudes.w.copy()))


# -- D-file -----------------------------------------------------------------------


def _state_payload(index: int, block: np.ndarray) -> bytes:
    return _STATE_HEAD.pack(index, block.shape[0]) + _as_le_bytes(block)


def write_dipole(path, blocks: Sequence[np.ndarray]) -> int:
    """Write per-state amplitude blocks (each ``rows x n_poles``); returns bytes written."""
    if not blocks:
        raise InvalidInput("a dipole file needs at least one state")
    arrays = [np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in blocks]
    n_poles = arrays[0].shape[1]
    if any(a.ndim != 2 or a.shape[1] != n_poles for a in arrays):
        raise InvalidInput("all state blocks must have the same number of poles")
    header_len = _D_HEADER.size + 8 * len(arrays)
    offset = header_len + 2 * _MARK.size
    offsets = []
    payloads = []
    for s, a in enumerate(arrays):
        p = _state_payload(s, a)
        offsets.append(offset)
        payloads.append(p)
        offset += len(p) + 2 * _MARK.size
    header = _D_HEADER.pack(D_MAGIC, VERSION, len(arrays), n_poles) + struct.pack(f"<{len(offsets)}Q", *offsets)
    total = 0
    record = "header"
    try:
        with open(path, "wb") as f:
            total += _write_record(f, header)
            for s, p in enumerate(payloads):
                record = f"state {s}"
                total += _write_record(f, p)
    except OSError as exc:
        raise RmxError(f"{path}: write failed at record '{record}': {exc}") from exc
    return total


@dataclass(frozen=True)
class DipoleHeader:
    n_initial_states: int
    n_poles: int
    offsets: tuple[int, ...]


def _parse_dipole_header(f, path) -> DipoleHeader:
    head = _read_record(f, "header", path)
    if len(head) < _D_HEADER.size:
        raise FormatError(f"{path}: dipole header too short")
    magic, version, n_states, n_poles = _D_HEADER.unpack_from(head)
    if magic != D_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(head) != _D_HEADER.size + 8 * n_states:
        raise CorruptRecord(f"{path}: offset index length disagrees with {n_states} states")
    offsets = struct.unpack_from(f"<{n_states}Q", head, _D_HEADER.size)
    if any(b <= a for a, b in zip(offsets, offsets[1:])):
        raise CorruptRecord(f"{path}: state offsets are not strictly increasing")
    return DipoleHeader(n_states, n_poles, tuple(offsets))


def read_dipole_header(path, opener: Callable = open) -> DipoleHeader:
    with opener(path, "rb") as f:
        return _parse_dipole_header(f, path)


def _read_state(f, path, hdr: DipoleHeader, state_index: int) -> np.ndarray:
    f.seek(hdr.offsets[state_index])
    name = f"state {state_index}"
    payload = _read_record(f, name, path)
    if len(payload) < _STATE_HEAD.size:
        raise CorruptRecord(f"{path}: record '{name}' too short")
    idx, rows = _STATE_HEAD.unpack_from(payload)
    if idx != state_index:
        raise CorruptRecord(f"{path}: offset for state {state_index} points at state {idx}")
    data = _f64(payload[_STATE_HEAD.size:], rows * hdr.n_poles, name, path)
    return data.reshape(rows, hdr.n_poles)


def read_dipole_state(path, state_index: int, opener: Callable = open) -> np.ndarray:
    with opener(path, "rb") as f:
        hdr = _parse_dipole_header(f, path)
        if not 0 <= state_index < hdr.n_initial_states:
            raise InvalidInput(f"state index {state_index} out of range (file holds {hdr.n_initial_states})")
        return _read_state(f, path, hdr, state_index)


def read_dipole_states(path, opener: Callable = open) -> list[np.ndarray]:
    with opener(path, "rb") as f:
        hdr = _parse_dipole_header(f, path)
        return [_read_state(f, path, hdr, s) for s in range(hdr.n_initial_states)]


def reduce_dipole(in_path, keep: Sequence[int], out_path) -> int:
    """Copy only the ``keep`` states to ``out_path`` (re-indexed from 0); returns its size."""
    keep = list(keep)
    if not keep:
        raise InvalidInput("keep must list at least one state")
    if any(b <= a for a, b in zip(keep, keep[1:])):
        raise InvalidInput("keep indices must be strictly increasing")
    with open(in_path, "rb") as f:
        hdr = _parse_dipole_header(f, in_path)
        if keep[0] < 0 or keep[-1] >= hdr.n_initial_states:
            raise InvalidInput(f"keep {keep} out of range for {hdr.n_initial_states} states")
        blocks = [_read_state(f, in_path, hdr, s) for s in keep]
    write_dipole(out_path, blocks)
    return Path(out_path).stat().st_size


# -- striping -----------------------------------------------------------------------


def _env_default_count() -> int:
    raw = os.environ.get("RMX_STRIPE_DEFAULT")
    if raw is None:
        return 2
    try:
        value = int(raw)
    except ValueError as exc:
        raise InvalidInput(f"RMX_STRIPE_DEFAULT must be a positive integer, got {raw!r}") from exc
    if value < 1:
        raise InvalidInput(f"RMX_STRIPE_DEFAULT must be a positive integer, got {raw!r}")
    return value


@dataclass(frozen=True)
class StripePolicy:
    """Size bands (lower bound in bytes, stripe count); ``None`` means the platform default."""

    default_count: int = 2
    thresholds: tuple[tuple[int, int | None], ...] = (
        (0, None),
        (1 * GiB, 20),
        (10 * GiB, 60),
        (100 * GiB, 120),
    )

    def __post_init__(self):
        if self.default_count < 1:
            raise InvalidInput("default stripe count must be positive")
        bounds = [b for b, _ in self.thresholds]
        if not bounds or bounds[0] != 0 or any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise InvalidInput("stripe bands must start at 0 and increase")
        if any(c is not None and c < 1 for _, c in self.thresholds):
            raise InvalidInput("stripe counts must be positive")

    @classmethod
    def from_env(cls) -> "StripePolicy":
        return cls(default_count=_env_default_count())


def stripe_count_for_size(size: int, policy: StripePolicy | None = None) -> int:
    """Stripe count for a file of ``size`` bytes; bands are closed on the left."""
    if size < 0:
        raise InvalidInput("size must be non-negative")
    policy = StripePolicy.from_env() if policy is None else policy
    count = None
    for lower, c in policy.thresholds:
        if size >= lower:
            count = c
        else:
            break
    return policy.default_count if count is None else count


# -- chunked (striped) reads -----------------------------------------------------------


def chunked_read(path, chunk_size: int, n_readers: int, opener: Callable = open) -> tuple[bytes, list[tuple[int, int, int]]]:
    """Read ``path`` as round-robin chunks over ``n_readers``, reassembled in order.

    Chunk ``c`` goes to reader ``c % n_readers``, modelling stripe-to-target
    assignment. The trace lists ``(reader, offset, length)`` grouped by reader,
    offsets ascending within each reader.
    """
    if chunk_size <= 0:
        raise InvalidInput("chunk_size must be positive")
    if n_readers < 1:
        raise InvalidInput("n_readers must be >= 1")
    size = Path(path).stat().st_size
    chunks = [(c % n_readers, off, min(chunk_size, size - off)) for c, off in enumerate(range(0, size, chunk_size))]
    if not chunks:
        chunks = [(0, 0, 0)]

    def reader(r: int) -> list[tuple[int, bytes]]:
        out = []
        with opener(path, "rb") as f:
            for owner, off, length in chunks:
                if owner != r:
                    continue
                f.seek(off)
                data = f.read(length)
                if len(data) != length:
                    raise RmxError(f"{path}: short read at offset {off} ({len(data)} of {length} bytes)")
                out.append((off, data))
        return out

    active = sorted({owner for owner, _, _ in chunks})
    with ThreadPoolExecutor(max_workers=len(active)) as pool:
        pieces = dict(zip(active, pool.map(reader, active)))
    buf = bytearray(size)
    for r in active:
        for off, data in pieces[r]:
            buf[off : off + len(data)] = data
    trace = sorted(chunks)
    return bytes(buf), trace


def format_trace_csv(trace: Sequence[tuple[int, int, int]]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["reader", "offset", "length"])
    writer.writerows(trace)
    return out.getvalue()
