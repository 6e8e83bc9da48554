"""Plain-text particle snapshots.

Format: ``# key=value`` header lines (dimension, gamma, R, beta, lambda, side,
kind, seed, ...) followed by one particle per line, coordinates written with
17 significant digits so that a round trip is exact.
"""

from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path

import numpy as np

from .domain import Domain, ParticleConfiguration
from .params import ModelParams

HEADER_KEYS = ("dimension", "gamma", "R", "beta", "lambda", "side", "kind", "seed")


def format_snapshot(q: ParticleConfiguration, seed: int | None = None, extra: dict | None = None) -> str:
    p = q.params
    header = {
        "dimension": p.d, "gamma": repr(p.gamma), "R": repr(p.hc_radius), "beta": repr(p.beta),
        "lambda": repr(p.lam), "side": repr(q.domain.side), "kind": q.domain.kind,
        "seed": "" if seed is None else seed,
    }
    header.update(extra or {})
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k}={v}\n")
    for row in q.positions:
        buf.write(" ".join(f"{c:.17g}" for c in row) + "\n")
    return buf.getvalue()


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_snapshot(path, q: ParticleConfiguration, seed: int | None = None, extra: dict | None = None):
    atomic_write_text(path, format_snapshot(q, seed, extra))


def parse_snapshot(text: str):
    """Return ``(header dict, positions array)``."""
    header, rows = {}, []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = value.strip()
        else:
            rows.append([float(t) for t in line.split()])
    d = int(header.get("dimension", len(rows[0]) if rows else 1))
    pos = np.array(rows, dtype=float).reshape(-1, d)
    return header, pos


def read_snapshot(path, params: ModelParams, boundary=None) -> ParticleConfiguration:
    """Load a snapshot into a validated (hard-core checked) configuration."""
    header, pos = parse_snapshot(Path(path).read_text())
    if int(header.get("dimension", params.d)) != params.d:
        raise ValueError("snapshot dimension does not match the parameters")
    side = float(header["side"])
    domain = Domain.from_params(params, header.get("kind", "box"), side=side, boundary=boundary)
    return ParticleConfiguration(pos, domain, params)
