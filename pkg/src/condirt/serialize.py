"""Binary storage of DIRT transports.

Layout, little-endian throughout::

    b"DIRT"  u32 version
    u32 n_layers  u32 d_y  u32 d_theta  u32 reference_kind  f64 bound
    f64 betas[n_layers]
    per layer:
        per variable: u32 n_k  f64 nodes[n_k]
        per variable: u32 shape[3]  f64 core
        per variable: u32 shape[3]  f64 marginal tensor
        f64 tt_mass  f64 gamma
    u32 has_preconditioner, then its arrays (see ``_write_precond``)
    u32 json_length  utf-8 JSON with the build log and metadata

Arrays are written verbatim, so a reloaded transport reproduces every
output bit for bit.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .basis import Basis1D
from .dirt import DirtTransport
from .errors import DirtFormatError
from .sirt import ReferenceMeasure, SirtTransport
from .tensor_train import FunctionalTensorTrain

__all__ = ["save_dirt", "load_dirt", "dumps_dirt", "loads_dirt", "FORMAT_VERSION", "MAGIC"]

MAGIC = b"DIRT"
FORMAT_VERSION = 1
_KINDS = ("uniform01", "truncated_gaussian")
_STRATEGIES = ("reorder", "rotate")


class _Writer:
    def __init__(self):
        self.parts = []

    def u32(self, *vals):
        if not vals:
            return
        self.parts.append(struct.pack(f"<{len(vals)}I", *[int(v) for v in vals]))

    def f64(self, arr):
        self.parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def tensor(self, arr):
        arr = np.asarray(arr)
        self.u32(arr.ndim, *arr.shape)
        self.f64(arr)

    def blob(self):
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise DirtFormatError(
                f"file truncated: needed {n} bytes at offset {self.pos}, {len(self.data) - self.pos} left"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32s(self, n):
        return struct.unpack(f"<{n}I", self.take(4 * n))

    def u32(self, n=1):
        vals = self.u32s(n)
        return vals[0] if n == 1 else vals

    def f64(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def tensor(self, max_ndim=4):
        ndim = self.u32()
        if ndim > max_ndim:
            raise DirtFormatError(f"implausible tensor rank {ndim}")
        shape = self.u32s(ndim)
        return self.f64(int(np.prod(shape))).reshape(shape)


def _write_precond(w, pc):
    w.u32(pc.d_y, pc.d_theta, pc.n_y, pc.n_theta, _STRATEGIES.index(pc.strategy))
    w.u32(*pc.order_y, *pc.order_theta)
    for arr in (pc.rotate_y, pc.rotate_theta, pc.spectrum_y, pc.spectrum_theta,
                pc.y_shift, pc.y_scale, pc.theta_shift, pc.theta_scale):
        w.tensor(arr)


def _read_precond(r):
    from .precondition import Preconditioner

    d_y, d_t, n_y, n_t, strat = r.u32(5)
    if strat >= len(_STRATEGIES):
        raise DirtFormatError(f"unknown preconditioner strategy code {strat}")
    order = np.array(r.u32s(d_y + d_t), dtype=int)
    order_y, order_t = order[:d_y], order[d_y:]
    arrs = [r.tensor() for _ in range(8)]
    return Preconditioner(
        order_y=order_y,
        order_theta=order_t,
        rotate_y=arrs[0],
        rotate_theta=arrs[1],
        n_y=n_y,
        n_theta=n_t,
        spectrum_y=arrs[2],
        spectrum_theta=arrs[3],
        strategy=_STRATEGIES[strat],
        y_shift=arrs[4],
        y_scale=arrs[5],
        theta_shift=arrs[6],
        theta_scale=arrs[7],
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def dumps_dirt(dirt):
    """Serialized bytes of a transport."""
    w = _Writer()
    w.parts.append(MAGIC)
    w.u32(FORMAT_VERSION)
    ref = dirt.reference
    w.u32(dirt.n_layers, dirt.dims[0], dirt.dims[1], _KINDS.index(ref.kind))
    w.f64([ref.bound])
    w.f64(dirt.betas)
    for s in dirt.layers:
        for b in s.tt.bases:
            w.u32(b.size)
            w.f64(b.nodes)
        for c in s.tt.cores:
            w.tensor(c)
        for m in s.marginal_tensors:
            w.tensor(m)
        w.f64([s.tt_mass, s.gamma])
    if dirt.precond is None:
        w.u32(0)
    else:
        w.u32(1)
        _write_precond(w, dirt.precond)
    extra = json.dumps({"build_log": _jsonable(dirt.build_log), "meta": _jsonable(dirt.meta)}).encode()
    w.u32(len(extra))
    w.parts.append(extra)
    return w.blob()


def loads_dirt(data):
    """Transport from bytes written by :func:`dumps_dirt`."""
    r = _Reader(bytes(data))
    if r.take(4) != MAGIC:
        raise DirtFormatError("not a DIRT file: bad magic header")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise DirtFormatError(f"unsupported format version {version}, expected {FORMAT_VERSION}")
    n_layers, d_y, d_t, kind = r.u32(4)
    if kind >= len(_KINDS):
        raise DirtFormatError(f"unknown reference kind code {kind}")
    if n_layers == 0 or n_layers > 10_000 or d_y + d_t == 0 or d_y + d_t > 10_000:
        raise DirtFormatError("implausible header values")
    bound = float(r.f64(1)[0])
    reference = ReferenceMeasure(_KINDS[kind], bound) if kind == 1 else ReferenceMeasure(_KINDS[kind])
    betas = r.f64(n_layers).tolist()
    d = d_y + d_t
    layers = []
    try:
        for _ in range(n_layers):
            bases = []
            for _ in range(d):
                n = r.u32()
                bases.append(Basis1D(r.f64(n)))
            cores = [r.tensor() for _ in range(d)]
            margs = [r.tensor() for _ in range(d)]
            tt_mass, gamma = r.f64(2)
            tt = FunctionalTensorTrain(cores, bases, (d_y, d_t))
            layers.append(SirtTransport(tt, margs, tt_mass, gamma, reference))
        precond = _read_precond(r) if r.u32() else None
        n_json = r.u32()
        extra = json.loads(r.take(n_json).decode())
    except DirtFormatError:
        raise
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise DirtFormatError(f"corrupt DIRT file: {exc}") from exc
    if r.pos != len(r.data):
        raise DirtFormatError(f"{len(r.data) - r.pos} trailing bytes after DIRT payload")
    return DirtTransport(layers, betas, reference, precond, extra.get("build_log"), extra.get("meta"))


def save_dirt(dirt, path):
    with open(path, "wb") as fh:
        fh.write(dumps_dirt(dirt))


def load_dirt(path):
    """Read a transport; raises :class:`DirtFormatError` on any malformed input."""
    with open(path, "rb") as fh:
        return loads_dirt(fh.read())
