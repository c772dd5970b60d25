"""Tag-stream, attenuation-sample and telemetry files.

Binary tag format (all little-endian)::

    offset  size  field
    0       8     magic  b"HDQTAGS1"
    8       1     flags  bit 0 set = blind (no truth columns)
    9       7     reserved, zero
    16      8     n_sent  (uint64, symbols emitted during the session)
    24      8     n_tags  (uint64)
    32      ...   n_tags packed records

    full record (21 bytes):  time f8 | channel u1 | symbol i8 | photons u1 |
                             basis u1 | state u1 | is_dark u1
    blind record (9 bytes):  time f8 | channel u1

``symbol`` is -1 for a pure dark count. All writers go through a temporary
file in the target directory followed by :func:`os.replace`.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .eventsim import TagStream
from .optimizer import AttenuationSample

__all__ = [
    "TAG_COLUMNS",
    "atomic_write",
    "read_samples_csv",
    "read_tags",
    "read_tags_binary",
    "read_tags_csv",
    "write_rows_csv",
    "write_samples_csv",
    "write_tags_binary",
    "write_tags_csv",
]

TAG_COLUMNS = ("arrival_time_s", "channel", "truth_symbol", "truth_photons", "truth_basis",
               "truth_state", "is_dark")
MAGIC = b"HDQTAGS1"
_HEADER = np.dtype([("magic", "S8"), ("flags", "u1"), ("reserved", "V7"),
                    ("n_sent", "<u8"), ("n_tags", "<u8")])
FULL_RECORD = np.dtype([("time", "<f8"), ("channel", "u1"), ("symbol", "<i8"),
                        ("photons", "u1"), ("basis", "u1"), ("state", "u1"), ("is_dark", "u1")])
BLIND_RECORD = np.dtype([("time", "<f8"), ("channel", "u1")])


def atomic_write(path, data: str | bytes) -> None:
    """Write ``data`` to ``path`` via a temporary sibling and rename."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_rows_csv(path, header, rows) -> None:
    atomic_write(path, _csv_text(header, rows))


# ---------------------------------------------------------------- tags

def write_tags_csv(path, tags: TagStream, blind: bool = False) -> None:
    """Times are written with ``repr`` precision so a read-back is exact."""
    blind = blind or tags.blind
    t = [repr(x) for x in tags.time.tolist()]
    ch = tags.channel.tolist()
    if blind:
        rows = zip(t, ch)
        header = TAG_COLUMNS[:2]
    else:
        rows = zip(t, ch, tags.symbol.tolist(), tags.photons.tolist(), tags.basis.tolist(),
                   tags.state.tolist(), tags.is_dark.astype(int).tolist())
        header = TAG_COLUMNS
    atomic_write(path, _csv_text(header, rows))


def read_tags_csv(path, n_sent: int = 0) -> TagStream:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    if tuple(header) not in (TAG_COLUMNS, TAG_COLUMNS[:2]):
        raise ValueError(f"unexpected tag CSV header {header}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2,
                      dtype=float if len(header) == 2 else object)
    if data.shape[0] == 0:
        data = np.zeros((0, len(header)))
    time = data[:, 0].astype(float)
    channel = data[:, 1].astype(float).astype(np.uint8)
    if len(header) == 2:
        return TagStream(time, channel, n_sent=n_sent)
    col = lambda i, dt: data[:, i].astype(float).astype(dt)
    return TagStream(time, channel, col(2, np.int64), col(3, np.uint8), col(4, np.uint8),
                     col(5, np.uint8), col(6, np.uint8).astype(bool), n_sent)


def write_tags_binary(path, tags: TagStream, blind: bool = False) -> None:
    blind = blind or tags.blind
    rec = np.zeros(len(tags), BLIND_RECORD if blind else FULL_RECORD)
    rec["time"] = tags.time
    rec["channel"] = tags.channel
    if not blind:
        rec["symbol"] = tags.symbol
        rec["photons"] = tags.photons
        rec["basis"] = tags.basis
        rec["state"] = tags.state
        rec["is_dark"] = tags.is_dark
    head = np.zeros(1, _HEADER)
    head["magic"] = MAGIC
    head["flags"] = 1 if blind else 0
    head["n_sent"] = tags.n_sent
    head["n_tags"] = len(tags)
    atomic_write(path, head.tobytes() + rec.tobytes())


def read_tags_binary(path) -> TagStream:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.itemsize:
        raise ValueError("file too short for a tag header")
    head = np.frombuffer(raw[:_HEADER.itemsize], _HEADER)[0]
    if bytes(head["magic"]) != MAGIC:
        raise ValueError("not a tag file (bad magic)")
    blind = bool(head["flags"] & 1)
    dt = BLIND_RECORD if blind else FULL_RECORD
    n = int(head["n_tags"])
    body = raw[_HEADER.itemsize:]
    if len(body) != n * dt.itemsize:
        raise ValueError("tag file truncated or padded")
    rec = np.frombuffer(body, dt)
    time = rec["time"].astype(float)
    channel = rec["channel"].copy()
    if blind:
        return TagStream(time, channel, n_sent=int(head["n_sent"]))
    return TagStream(time, channel, rec["symbol"].astype(np.int64), rec["photons"].copy(),
                     rec["basis"].copy(), rec["state"].copy(), rec["is_dark"].astype(bool),
                     int(head["n_sent"]))


def read_tags(path) -> TagStream:
    """Dispatch on the magic bytes."""
    with open(path, "rb") as fh:
        start = fh.read(len(MAGIC))
    return read_tags_binary(path) if start == MAGIC else read_tags_csv(path)


# ---------------------------------------------------------------- samples

SAMPLE_COLUMNS = tuple(f.name for f in fields(AttenuationSample))


def write_samples_csv(path, samples) -> None:
    rows = [[repr(float(v)) for v in asdict(s).values()] for s in samples]
    atomic_write(path, _csv_text(SAMPLE_COLUMNS, rows))


def read_samples_csv(path) -> list[AttenuationSample]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SAMPLE_COLUMNS[:8]) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"sample CSV lacks columns {sorted(missing)}")
        return [AttenuationSample(**{k: float(v) for k, v in row.items() if k in SAMPLE_COLUMNS})
                for row in reader]
