"""Per-iteration solver metrics and their CSV form."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

CSV_HEADER = ("k", "rel_err", "phi", "grad_norm", "comms", "wall_ms")


def fmt_float(v: float) -> str:
    """17 significant digits: enough to round-trip any double."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


@dataclass
class Trace:
    """Row ``k`` holds metrics at iterate ``x^k`` and the per-node vector
    transmissions made during the first ``k`` iterations."""

    k: list = field(default_factory=list)
    rel_err: list = field(default_factory=list)
    phi: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    comms: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    status: str = "running"
    timing: bool = False

    def __post_init__(self):
        self._t0 = time.perf_counter()

    def __len__(self):
        return len(self.k)

    def record(self, k, rel_err, phi, grad_norm, comms):
        self.k.append(int(k))
        self.rel_err.append(float(rel_err))
        self.phi.append(float(phi))
        self.grad_norm.append(float(grad_norm))
        self.comms.append(int(comms))
        elapsed = (time.perf_counter() - self._t0) * 1e3 if self.timing else 0.0
        self.wall_ms.append(elapsed)

    def warn(self, message: str):
        if message not in self.warnings:
            self.warnings.append(message)

    @property
    def final_rel_err(self) -> float:
        return self.rel_err[-1] if self.rel_err else math.nan

    def first_below(self, threshold: float):
        """Smallest ``k`` with ``rel_err <= threshold``, or ``None``."""
        for k, e in zip(self.k, self.rel_err):
            if e <= threshold:
                return k
        return None

    def rows(self):
        for row in zip(self.k, self.rel_err, self.phi, self.grad_norm, self.comms, self.wall_ms):
            yield row

    def to_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for k, e, ph, g, c, t in self.rows():
            writer.writerow([k, fmt_float(e), fmt_float(ph), fmt_float(g), c, fmt_float(t)])

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self.to_csv(fh)

    @classmethod
    def read_csv(cls, path) -> "Trace":
        tr = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                tr.k.append(int(row["k"]))
                tr.rel_err.append(float(row["rel_err"]))
                tr.phi.append(float(row["phi"]))
                tr.grad_norm.append(float(row["grad_norm"]))
                tr.comms.append(int(row["comms"]))
                tr.wall_ms.append(float(row["wall_ms"]))
        tr.status = "loaded"
        return tr
