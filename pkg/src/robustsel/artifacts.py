"""Artifact I/O: atomic writes, provenance headers, CSV/JSON/JSONL emitters.

Result files are byte-stable across reruns with the same config and seed;
the only varying field is the "created" timestamp inside the provenance
record.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from datetime import datetime, timezone

from . import __version__


def provenance(config_hash: str, seed: int, **extra) -> dict:
    record = {
        "config_hash": config_hash,
        "seed": seed,
        "tool_version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
    }
    record.update(extra)
    return record


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header: list[str], rows: list[list], prov: dict | None = None) -> None:
    buf = io.StringIO()
    if prov is not None:
        buf.write("# provenance: " + json.dumps(prov, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def write_json(path: str, payload: dict, prov: dict | None = None) -> None:
    if prov is not None:
        payload = {"provenance": prov, **payload}
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_jsonl(path: str, records: list[dict], prov: dict | None = None) -> None:
    lines = []
    if prov is not None:
        lines.append(json.dumps({"provenance": prov}, sort_keys=True))
    lines += [json.dumps(r, sort_keys=True) for r in records]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv_rows(path: str) -> tuple[list[str], list[list[str]]]:
    """CSV reader that skips '#' provenance/comment lines."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    return rows[0], rows[1:]


def read_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)
