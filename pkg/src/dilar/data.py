"""Uniformly sampled single-trajectory datasets and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from dilar.errors import DataError
from dilar.netcore.params import atomic_write_text

CSV_HEADER = ("t", "u", "omega", "alpha")


@dataclass(frozen=True)
class Dataset:
    """Samples ``i = 0 .. N-1`` of input ``u`` and observed states ``x_obs``.

    Indices below ``split_index`` form the training region.
    """

    t: np.ndarray
    u: np.ndarray
    x_obs: np.ndarray
    h: float
    split_index: int

    def __post_init__(self):
        n = len(self.t)
        if len(self.u) != n or len(self.x_obs) != n:
            raise DataError("t, u and x_obs must have the same number of samples")
        if not 1 <= self.split_index <= n:
            raise DataError(f"split_index {self.split_index} outside 1..{n}")

    def __len__(self):
        return len(self.t)

    @property
    def obs_dim(self) -> int:
        return self.x_obs.shape[1]

    @property
    def train_steps(self) -> int:
        """Longest rollout window inside the training region."""
        return self.split_index - 1

    def head(self, n: int) -> "Dataset":
        return Dataset(self.t[:n], self.u[:n], self.x_obs[:n], self.h, min(self.split_index, n))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for t, u, (om, al) in zip(self.t, self.u, self.x_obs):
            writer.writerow([repr(float(t)), repr(float(u)), repr(float(om)), repr(float(al))])
        return buf.getvalue()

    def save(self, path) -> None:
        atomic_write_text(path, self.to_csv())

    @classmethod
    def from_csv(cls, text: str, split_index: int | None = None, h: float | None = None) -> "Dataset":
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("dataset is empty") from None
        if tuple(c.strip() for c in header) != CSV_HEADER:
            raise DataError(f"row 1: expected header {','.join(CSV_HEADER)}, got {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"row {lineno}: expected 4 columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"row {lineno}: {exc}") from None
        if len(rows) < 2:
            raise DataError("dataset needs at least two samples")
        arr = np.array(rows)
        t = arr[:, 0]
        steps = np.diff(t)
        if h is None:
            h = float(np.round(steps.mean(), 12))
        if not np.allclose(steps, h, rtol=1e-6, atol=1e-9):
            raise DataError("samples are not uniformly spaced")
        if split_index is None:
            split_index = len(t) // 2
        return cls(t, arr[:, 1], arr[:, 2:4], float(h), int(split_index))

    @classmethod
    def load(cls, path, split_index: int | None = None) -> "Dataset":
        try:
            with open(path, newline="") as fh:
                text = fh.read()
        except OSError as exc:
            raise DataError(f"cannot read dataset {path}: {exc}") from exc
        return cls.from_csv(text, split_index)
