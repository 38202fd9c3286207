"""Flat, named parameter storage with JSON checkpoints."""

from __future__ import annotations

import json
import os
import tempfile
from collections.abc import Mapping
from typing import Iterable

import numpy as np

from dilar.errors import DataError, InvalidArgument


class ParamStore(Mapping):
    """Ordered collection of named float64 vectors backed by one flat buffer.

    Indexing by name returns a read-only view into the buffer. The layout
    (names and lengths) is fixed at construction; values change only through
    :meth:`with_flat` (new store) or :meth:`assign_flat` (in place).
    """

    def __init__(self, entries: Iterable[tuple[str, object]]):
        names, sizes, chunks = [], [], []
        for name, values in entries:
            if name in names:
                raise InvalidArgument(f"duplicate parameter name {name!r}")
            arr = np.atleast_1d(np.asarray(values, dtype=np.float64)).ravel()
            names.append(str(name))
            sizes.append(arr.size)
            chunks.append(arr)
        self._names = tuple(names)
        self._slices = {}
        offset = 0
        for name, size in zip(names, sizes):
            self._slices[name] = slice(offset, offset + size)
            offset += size
        self._flat = np.concatenate(chunks) if chunks else np.zeros(0)
        self._flat.setflags(write=False)

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    @property
    def total_dim(self) -> int:
        return self._flat.size

    def slice_of(self, name: str) -> slice:
        return self._slices[name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self._flat[self._slices[name]]

    def __iter__(self):
        return iter(self._names)

    def __len__(self) -> int:
        return len(self._names)

    def __repr__(self) -> str:
        parts = ", ".join(f"{n}[{self[n].size}]" for n in self._names)
        return f"ParamStore({parts})"

    def flatten(self) -> np.ndarray:
        return self._flat.copy()

    def unflatten(self, flat) -> dict:
        """Split ``flat`` (array or tape variable) into a name -> slice dict."""
        if len(flat) != self.total_dim:
            raise InvalidArgument(
                f"flat vector has length {len(flat)}, layout needs {self.total_dim}"
            )
        return {n: flat[self._slices[n]] for n in self._names}

    def with_flat(self, flat) -> "ParamStore":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.total_dim,):
            raise InvalidArgument(
                f"flat vector has shape {flat.shape}, layout needs ({self.total_dim},)"
            )
        return ParamStore((n, flat[self._slices[n]]) for n in self._names)

    def replace(self, **values) -> "ParamStore":
        entries = []
        for n in self._names:
            v = np.asarray(values.pop(n), dtype=np.float64) if n in values else self[n]
            if v.size != self[n].size:
                raise InvalidArgument(f"entry {n!r} must keep length {self[n].size}")
            entries.append((n, v))
        if values:
            raise InvalidArgument(f"unknown entries {sorted(values)}")
        return ParamStore(entries)

    def assign_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self._flat.shape:
            raise InvalidArgument("flat vector does not match the layout")
        buf = flat.copy()
        buf.setflags(write=False)
        self._flat = buf

    def same_layout(self, other: "ParamStore") -> bool:
        return self._names == other._names and all(
            self._slices[n] == other._slices[n] for n in self._names
        )

    def to_dict(self) -> dict:
        return {"entries": [{"name": n, "values": self[n].tolist()} for n in self._names]}

    @classmethod
    def from_dict(cls, data: dict) -> "ParamStore":
        try:
            return cls((e["name"], e["values"]) for e in data["entries"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed parameter checkpoint: {exc}") from exc

    def to_json(self, **extra) -> str:
        # float repr is the shortest string that round-trips exactly
        return json.dumps({**self.to_dict(), **extra}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ParamStore":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"checkpoint is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def save(self, path, **extra) -> None:
        atomic_write_text(path, self.to_json(**extra))

    @classmethod
    def load(cls, path) -> "ParamStore":
        with open(path) as fh:
            return cls.from_json(fh.read())


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
