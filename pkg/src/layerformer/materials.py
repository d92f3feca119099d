"""Tabulated dispersion data for the material database.

Each material is a CSV file ``<name>.csv`` with header ``wavelength_nm,n,k``.
Indices are linearly interpolated in wavelength, with n and k handled
independently.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BadMaterialId, DuplicateName, MalformedRow, MissingCoverage, OutOfRange

#: Every material must be tabulated over at least this window (nm).
COVERAGE_NM = (400.0, 1100.0)
CSV_HEADER = ("wavelength_nm", "n", "k")


@dataclass(frozen=True)
class Material:
    name: str
    wavelength_nm: np.ndarray
    n: np.ndarray
    k: np.ndarray
    production: bool = True

    def __post_init__(self):
        wl = np.array(self.wavelength_nm, dtype=np.float64)
        n = np.array(self.n, dtype=np.float64)
        k = np.array(self.k, dtype=np.float64)
        if not (wl.ndim == n.ndim == k.ndim == 1 and wl.size == n.size == k.size):
            raise MalformedRow(f"{self.name}: sample columns must be equal-length vectors")
        if wl.size == 0:
            raise MissingCoverage(f"{self.name}: no samples")
        if not np.all(np.isfinite(wl)) or not np.all(np.isfinite(n)) or not np.all(np.isfinite(k)):
            raise MalformedRow(f"{self.name}: non-finite sample")
        if np.any(wl <= 0) or np.any(n <= 0) or np.any(k < 0):
            raise MalformedRow(f"{self.name}: need wavelength > 0, n > 0, k >= 0")
        if np.any(np.diff(wl) <= 0):
            raise MalformedRow(f"{self.name}: wavelengths must be strictly ascending")
        if wl[0] > COVERAGE_NM[0] or wl[-1] < COVERAGE_NM[1]:
            raise MissingCoverage(
                f"{self.name}: samples span [{wl[0]}, {wl[-1]}] nm, need {list(COVERAGE_NM)}"
            )
        for arr in (wl, n, k):
            arr.setflags(write=False)
        object.__setattr__(self, "wavelength_nm", wl)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "k", k)

    @property
    def lossless(self) -> bool:
        return bool(np.all(self.k == 0.0))

    def index(self, wavelength_nm) -> np.ndarray:
        """Complex index n + ik at one or many wavelengths (no range check)."""
        wl = np.asarray(wavelength_nm, dtype=np.float64)
        n = np.interp(wl, self.wavelength_nm, self.n)
        k = np.interp(wl, self.wavelength_nm, self.k)
        return n + 1j * k


@dataclass(frozen=True)
class MaterialDb:
    materials: tuple[Material, ...]
    index: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "materials", tuple(self.materials))
        index = {}
        for pos, mat in enumerate(self.materials):
            if mat.name in index:
                raise DuplicateName(mat.name)
            index[mat.name] = pos
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.materials)

    def __getitem__(self, material_id: int) -> Material:
        return self.materials[self._check_id(material_id)]

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.materials]

    def id_of(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise BadMaterialId(f"unknown material {name!r}") from None

    def _check_id(self, material_id) -> int:
        if isinstance(material_id, (bool, np.bool_)) or not isinstance(material_id, (int, np.integer)):
            raise BadMaterialId(f"material id must be an integer, got {material_id!r}")
        if not 0 <= material_id < len(self.materials):
            raise BadMaterialId(f"material id {material_id} outside [0, {len(self.materials)})")
        return int(material_id)

    def index_on_grid(self, material_id: int, wavelengths_nm: np.ndarray) -> np.ndarray:
        """Vectorized :func:`refractive_index` over an array of wavelengths."""
        mat = self[material_id]
        wl = np.asarray(wavelengths_nm, dtype=np.float64)
        _check_range(wl)
        return mat.index(wl)

    def to_bytes(self) -> bytes:
        """Canonical serialization; identical loads give identical bytes."""
        payload = [
            {
                "name": m.name,
                "wavelength_nm": m.wavelength_nm.tolist(),
                "n": m.n.tolist(),
                "k": m.k.tolist(),
            }
            for m in self.materials
        ]
        return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def _check_range(wl: np.ndarray) -> None:
    lo, hi = COVERAGE_NM
    if wl.size and (np.min(wl) < lo or np.max(wl) > hi or not np.all(np.isfinite(wl))):
        raise OutOfRange(f"wavelengths must lie in [{lo}, {hi}] nm")


def refractive_index(db: MaterialDb, material_id: int, wavelength_nm: float) -> complex:
    """Complex refractive index of ``material_id`` at a single wavelength."""
    if not (COVERAGE_NM[0] <= wavelength_nm <= COVERAGE_NM[1]) or math.isnan(wavelength_nm):
        raise OutOfRange(f"{wavelength_nm} nm outside {list(COVERAGE_NM)}")
    return complex(db[material_id].index(float(wavelength_nm)))


def read_material_csv(path: str | Path) -> Material:
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise MalformedRow(f"{path.name}: header must be {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise MalformedRow(f"{path.name}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                rows.append(tuple(float(c) for c in row))
            except ValueError:
                raise MalformedRow(f"{path.name}:{lineno}: not a number: {row}") from None
    if not rows:
        raise MissingCoverage(f"{path.name}: no samples")
    wl, n, k = (np.array(col) for col in zip(*rows))
    return Material(path.stem, wl, n, k)


def write_material_csv(material: Material, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for w, n, k in zip(material.wavelength_nm, material.n, material.k):
            fh.write(f"{float(w)!r},{float(n)!r},{float(k)!r}\n")


def load_material_db(directory_path: str | Path) -> MaterialDb:
    """Load every ``*.csv`` in a directory, ordered by filename."""
    directory = Path(directory_path)
    files = sorted(directory.glob("*.csv"), key=lambda p: p.name)
    if not files:
        raise FileNotFoundError(f"no dispersion CSV files in {directory}")
    return MaterialDb(tuple(read_material_csv(f) for f in files))


def constant_material(name: str, n: float, k: float = 0.0, production: bool = False) -> Material:
    """Non-dispersive material sampled every 50 nm over the coverage window."""
    wl = np.arange(COVERAGE_NM[0], COVERAGE_NM[1] + 1.0, 50.0)
    return Material(name, wl, np.full(wl.shape, float(n)), np.full(wl.shape, float(k)), production)


TOY_MATERIALS: tuple[tuple[str, float, float], ...] = (
    ("toy_absorber", 2.5, 0.5),
    ("toy_n1.5", 1.5, 0.0),
    ("toy_n2.0", 2.0, 0.0),
)


def toy_material_db(extra: Iterable[Material] = ()) -> MaterialDb:
    """Synthetic non-production materials, in the same lexicographic order a
    directory load of :func:`write_toy_materials` would give."""
    mats = [constant_material(name, n, k) for name, n, k in TOY_MATERIALS]
    mats.extend(extra)
    return MaterialDb(tuple(sorted(mats, key=lambda m: m.name)))


def write_toy_materials(directory: str | Path, names: Sequence[str] | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, n, k in TOY_MATERIALS:
        if names is None or name in names:
            write_material_csv(constant_material(name, n, k), directory / f"{name}.csv")
    return directory
