"""Snapshots and CSV traces.

Snapshot format ``KLAB1``::

    KLAB1
    <kind> <N> <X> <mu> <V>
    <sample>            one per line, row-major, 17 significant digits

Samples are always written relative to the canonical reference, so a
snapshot does not depend on how a model was rebased.  CSV traces start with
comment lines carrying the provenance (package version, config hash, seed)
followed by a header row; floats use 17 significant digits so reruns with
the same inputs are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ModelMismatch
from .model import Potential

MAGIC = "KLAB1"


def fmt(x):
    """17-significant-digit text of a float (exact round trip)."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def descriptor_line(model):
    kind, N, X, mu, V = model.descriptor
    return f"{kind} {N} {fmt(X)} {fmt(mu)} {fmt(V)}"


def write_snapshot(path, phi):
    """Write ``phi`` (canonical samples) in KLAB1 format."""
    canon = phi.to_canonical()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="ascii", newline="\n") as fh:
        fh.write(MAGIC + "\n")
        fh.write(descriptor_line(canon.model) + "\n")
        for v in canon.samples.ravel():
            fh.write(format(float(v), ".17g") + "\n")
    return path


def read_descriptor(path):
    with Path(path).open("r", encoding="ascii") as fh:
        magic = fh.readline().strip()
        if magic != MAGIC:
            raise ModelMismatch(f"{path}: not a {MAGIC} snapshot (found {magic!r})")
        parts = fh.readline().split()
    if len(parts) != 5:
        raise ModelMismatch(f"{path}: malformed descriptor line")
    kind, N, X, mu, V = parts
    return kind, int(N), float(X), float(mu), float(V)


def read_snapshot(path, model):
    """Read a KLAB1 snapshot onto ``model``.

    The samples are streamed into one preallocated array; the descriptor
    must match the canonical form of ``model``.  A rebased model receives
    the samples measured from its own reference.
    """
    canon = model.canonical
    desc = read_descriptor(path)
    if desc != tuple(canon.descriptor):
        raise ModelMismatch(f"{path}: descriptor {desc} does not match model {canon.descriptor}")
    n = int(np.prod(canon.shape))
    out = np.empty(n)
    with Path(path).open("r", encoding="ascii") as fh:
        fh.readline()
        fh.readline()
        k = 0
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if k >= n:
                raise ModelMismatch(f"{path}: more than {n} samples")
            out[k] = float(line)
            k += 1
    if k != n:
        raise ModelMismatch(f"{path}: expected {n} samples, found {k}")
    samples = out.reshape(canon.shape)
    if model is not canon:
        samples = samples - model.offset
    return Potential(model, samples)


def config_hash(config):
    """Short stable hash of a flat configuration mapping."""
    text = json.dumps({k: str(v) for k, v in sorted(config.items())}, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_csv(path, rows, config=None, seed=None, columns=None):
    """Write dict rows with a provenance header; returns the path."""
    config = config or {}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = []
        for row in rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# klab {__version__}\n")
        fh.write(f"# config_hash {config_hash(config)}\n")
        fh.write(f"# seed {seed if seed is not None else config.get('seed', 'none')}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(row.get(c, "")) for c in columns])
    return path


def read_csv(path):
    """Rows of a klab CSV (provenance lines skipped), values as strings."""
    with Path(path).open("r", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def read_provenance(path):
    meta = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(" ")
            meta[key] = value
    return meta


def write_field_csv(path, phi, config=None, seed=None):
    """Samples of a potential with grid coordinates as columns."""
    model = phi.model
    if model.kind == "p1":
        rows = [dict(x=x, phi=v) for x, v in zip(model.coords, phi.samples)]
    else:
        gx, gy = model.coords
        rows = [dict(x=a, y=b, phi=v) for a, b, v in
                zip(gx.ravel(), gy.ravel(), phi.samples.ravel())]
    return write_csv(path, rows, config=config, seed=seed)
