"""Analytic optimizer-state byte accounting.

Only persistent state is counted (moments, factor vectors, sign bitmaps);
per-step temporaries are reported separately by :func:`scratch_bytes`.
Byte counts are exact integers; ``bpe`` is bytes per stored real.
"""
from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .factorize import BYTE, PACKED, SignBitmap
from .matricize import effective_shape

KINDS = ("adam", "adafactor", "smmf", "smmf-no-momentum")
MIB = 1 << 20
TOTAL = "TOTAL"


class ManifestError(ValueError):
    pass


def _shape(shape) -> tuple[int, ...]:
    shape = tuple(int(n) for n in shape) or (1,)
    if any(n < 1 for n in shape):
        raise ValueError(f"axis lengths must be >= 1, got {shape}")
    return shape


def state_bytes(
    kind: str,
    shape: Sequence[int],
    bpe: int = 4,
    sign_mode: str = PACKED,
    adafactor_momentum: bool = True,
    vector_reshape: bool = True,
) -> int:
    """Persistent state bytes for one parameter of ``shape`` under optimizer ``kind``.

    * adam: ``2 N bpe``
    * adafactor: ``prod(n_1..n_{d-2}) (n_{d-1} + n_d) bpe`` for rank >= 2,
      ``N bpe`` for vectors, plus ``N bpe`` when the first moment is kept
    * smmf: ``2 (n_hat + m_hat) bpe`` plus the sign map
    * smmf-no-momentum: ``(n_hat + m_hat) bpe``
    """
    if bpe not in (4, 8):
        raise ValueError(f"bpe must be 4 or 8, got {bpe}")
    shape = _shape(shape)
    n = math.prod(shape)
    if kind == "adam":
        return 2 * n * bpe
    if kind == "adafactor":
        if len(shape) >= 2:
            second = math.prod(shape[:-2]) * (shape[-2] + shape[-1])
        else:
            second = n
        return (second + (n if adafactor_momentum else 0)) * bpe
    if kind in ("smmf", "smmf-no-momentum"):
        with_m = kind == "smmf"
        squeezed = [a for a in shape if a != 1]
        if len(squeezed) == 1 and not vector_reshape:
            return (2 if with_m else 1) * n * bpe
        es = effective_shape(n)
        vec = (es.n_hat + es.m_hat) * bpe
        if not with_m:
            return vec
        return 2 * vec + SignBitmap.byte_size(es.n_hat, es.m_hat, sign_mode)
    raise ValueError(f"unknown optimizer kind {kind!r}; expected one of {KINDS}")


def scratch_bytes(shape: Sequence[int], bpe: int = 4) -> int:
    """Peak per-layer temporaries for an SMMF step (six dense N-element buffers)."""
    return 6 * math.prod(_shape(shape)) * bpe


@dataclass
class ShapeManifest:
    entries: list[tuple[str, tuple[int, ...]]]

    def __post_init__(self):
        names = [n for n, _ in self.entries]
        if len(set(names)) != len(names):
            raise ManifestError("manifest entry names must be unique")

    @classmethod
    def parse(cls, text: str) -> "ShapeManifest":
        """Parse ``name: d1xd2x...`` lines; blank lines and ``#`` comments are skipped."""
        entries = []
        seen = set()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.fullmatch(r"([^:\s][^:]*?)\s*:\s*(\d+(?:\s*[xX]\s*\d+)*)", line)
            if not m:
                raise ManifestError(f"line {lineno}: expected 'name: d1xd2x...', got {raw!r}")
            name = m.group(1)
            dims = tuple(int(d) for d in re.split(r"\s*[xX]\s*", m.group(2)))
            if any(d < 1 for d in dims):
                raise ManifestError(f"line {lineno}: axis lengths must be >= 1")
            if name in seen:
                raise ManifestError(f"line {lineno}: duplicate name {name!r}")
            if name == TOTAL:
                raise ManifestError(f"line {lineno}: {TOTAL!r} is reserved")
            seen.add(name)
            entries.append((name, dims))
        if not entries:
            raise ManifestError("manifest is empty")
        return cls(entries)

    @classmethod
    def load(cls, path) -> "ShapeManifest":
        return cls.parse(Path(path).read_text())


@dataclass
class MemoryReport:
    entries: dict[str, dict[str, int]]
    bpe: int
    sign_mode: str
    totals: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.totals = {k: sum(e[k] for e in self.entries.values()) for k in KINDS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "optimizer", "bytes"])
        for name, per_kind in self.entries.items():
            for kind in KINDS:
                w.writerow([name, kind, per_kind[kind]])
        for kind in KINDS:
            w.writerow([TOTAL, kind, self.totals[kind]])
        return buf.getvalue()

    def to_table(self) -> str:
        width = max(len(TOTAL), *(len(n) for n in self.entries))
        head = f"{'name':<{width}}  " + "  ".join(f"{k:>18}" for k in KINDS)
        lines = [head, "-" * len(head)]
        rows = list(self.entries.items()) + [(TOTAL, self.totals)]
        for name, per_kind in rows:
            cells = "  ".join(f"{per_kind[k] / MIB:>14.4f} MiB" for k in KINDS)
            lines.append(f"{name:<{width}}  {cells}")
        return "\n".join(lines)


def report(
    manifest: ShapeManifest,
    bpe: int = 4,
    sign_mode: str = PACKED,
    adafactor_momentum: bool = True,
) -> MemoryReport:
    if not manifest.entries:
        raise ManifestError("manifest is empty")
    entries = {
        name: {k: state_bytes(k, shape, bpe, sign_mode, adafactor_momentum) for k in KINDS}
        for name, shape in manifest.entries
    }
    return MemoryReport(entries, bpe, sign_mode)


__all__ = [
    "BYTE", "KINDS", "MIB", "PACKED", "ManifestError", "MemoryReport", "ShapeManifest",
    "report", "scratch_bytes", "state_bytes",
]
