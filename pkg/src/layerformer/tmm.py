"""Transfer-matrix solver for coherent multilayer stacks at normal incidence.

Fields use the ``exp(-i omega t)`` convention, so a positive extinction
coefficient k in ``n + ik`` means absorption and a forward wave inside a layer
goes as ``exp(+i 2 pi n z / lambda)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvalidStructure, NonFiniteResult
from .materials import MaterialDb

MAX_LAYERS = 20
THICKNESS_RANGE_NM = (10.0, 500.0)


@dataclass(frozen=True)
class Structure:
    """Layers ordered from the illuminated side to the substrate side.

    An empty stack is allowed and denotes the bare ambient/exit interface;
    tokenization rejects it.
    """

    layers: tuple[tuple[int, float], ...]
    max_layers: int = MAX_LAYERS

    def __post_init__(self):
        layers = tuple((int(m), float(t)) for m, t in self.layers)
        if len(layers) > self.max_layers:
            raise InvalidStructure(f"{len(layers)} layers exceeds max_layers={self.max_layers}")
        lo, hi = THICKNESS_RANGE_NM
        for pos, (m, t) in enumerate(layers):
            if not lo <= t <= hi:
                raise InvalidStructure(f"layer {pos}: thickness {t} nm outside [{lo}, {hi}]")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def from_lists(cls, materials: Sequence[int], thicknesses: Sequence[float], **kw) -> "Structure":
        if len(materials) != len(thicknesses):
            raise InvalidStructure("materials and thicknesses differ in length")
        return cls(tuple(zip(materials, thicknesses)), **kw)

    @property
    def materials(self) -> list[int]:
        return [m for m, _ in self.layers]

    @property
    def thicknesses(self) -> list[float]:
        return [t for _, t in self.layers]

    @property
    def total_thickness(self) -> float:
        return math.fsum(self.thicknesses)

    def __len__(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class WavelengthGrid:
    start_nm: float = 400.0
    stop_nm: float = 1100.0
    step_nm: float = 10.0
    count: int = field(init=False)

    def __post_init__(self):
        if self.step_nm <= 0 or self.stop_nm < self.start_nm:
            raise ConfigError(f"bad grid {self.start_nm}:{self.stop_nm}:{self.step_nm}")
        steps = (self.stop_nm - self.start_nm) / self.step_nm
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError("grid span must be an integer number of steps")
        object.__setattr__(self, "count", int(round(steps)) + 1)

    @property
    def wavelengths(self) -> np.ndarray:
        return self.start_nm + self.step_nm * np.arange(self.count, dtype=np.float64)

    @classmethod
    def parse(cls, text: str) -> "WavelengthGrid":
        """Parse ``start:stop:step``."""
        try:
            start, stop, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise ConfigError(f"grid must be start:stop:step, got {text!r}") from None
        return cls(start, stop, step)


@dataclass(frozen=True)
class AmbientConfig:
    incident_index: complex = 1.0 + 0j
    exit_index: complex = 1.45 + 0j

    def __post_init__(self):
        n_in, n_out = complex(self.incident_index), complex(self.exit_index)
        if n_in.imag != 0 or n_in.real <= 0:
            raise ConfigError("incident medium must be lossless with positive index")
        if n_out.real <= 0 or n_out.imag < 0:
            raise ConfigError("exit medium must have n > 0, k >= 0")
        object.__setattr__(self, "incident_index", n_in)
        object.__setattr__(self, "exit_index", n_out)


@dataclass(frozen=True)
class Spectrum:
    grid: WavelengthGrid
    R: np.ndarray
    T: np.ndarray

    @property
    def A(self) -> np.ndarray:
        return 1.0 - self.R - self.T

    def flat(self) -> np.ndarray:
        """Reflection then transmission, length ``2 * grid.count``."""
        return np.concatenate([self.R, self.T])


def _layer_indices(db: MaterialDb, s: Structure, wl: np.ndarray) -> list[np.ndarray]:
    return [db.index_on_grid(m, wl) for m in s.materials]


def _stack_matrix(indices, thicknesses, wl):
    """Product of characteristic matrices, elementwise over wavelength."""
    m00 = np.ones(wl.shape, dtype=np.complex128)
    m01 = np.zeros(wl.shape, dtype=np.complex128)
    m10 = np.zeros(wl.shape, dtype=np.complex128)
    m11 = np.ones(wl.shape, dtype=np.complex128)
    for n, d in zip(indices, thicknesses):
        delta = 2.0 * np.pi * n * d / wl
        c, s = np.cos(delta), np.sin(delta)
        a01 = -1j * s / n
        a10 = -1j * n * s
        m00, m01, m10, m11 = (
            m00 * c + m01 * a10,
            m00 * a01 + m01 * c,
            m10 * c + m11 * a10,
            m10 * a01 + m11 * c,
        )
    return m00, m01, m10, m11


def _coefficients(db, s, wl, amb):
    indices = _layer_indices(db, s, wl)
    m00, m01, m10, m11 = _stack_matrix(indices, s.thicknesses, wl)
    n0, ne = amb.incident_index, amb.exit_index
    B = m00 + m01 * ne
    C = m10 + m11 * ne
    denom = n0 * B + C
    r = (n0 * B - C) / denom
    t = 2.0 * n0 / denom
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
        raise NonFiniteResult("non-finite reflection/transmission coefficient")
    return indices, r, t


def simulate(
    db: MaterialDb,
    s: Structure,
    grid: WavelengthGrid | None = None,
    amb: AmbientConfig | None = None,
) -> Spectrum:
    """Reflectance and transmittance of ``s`` on every grid wavelength."""
    grid = grid or WavelengthGrid()
    amb = amb or AmbientConfig()
    wl = grid.wavelengths
    _, r, t = _coefficients(db, s, wl, amb)
    R = np.abs(r) ** 2
    T = (amb.exit_index.real / amb.incident_index.real) * np.abs(t) ** 2
    return Spectrum(grid, R, T)


def worker_count(requested: int | None = None) -> int:
    """Pool size: explicit request, else ``OL_THREADS``, else CPU count."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("OL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"OL_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def simulate_batch(
    db: MaterialDb,
    batch: Sequence[Structure],
    grid: WavelengthGrid | None = None,
    amb: AmbientConfig | None = None,
    workers: int | None = None,
) -> list[Spectrum]:
    """Run :func:`simulate` over a batch on a thread pool, preserving order.

    The first failing structure's exception is re-raised with an ``index``
    attribute holding its batch position.
    """
    grid = grid or WavelengthGrid()
    amb = amb or AmbientConfig()

    def one(item):
        i, s = item
        try:
            return simulate(db, s, grid, amb)
        except Exception as exc:
            exc.index = i
            raise

    n_workers = min(worker_count(workers), max(1, len(batch)))
    if n_workers == 1:
        return [one(item) for item in enumerate(batch)]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(one, enumerate(batch), chunksize=max(1, len(batch) // (4 * n_workers))))


@dataclass(frozen=True)
class FieldMap:
    z_nm: np.ndarray
    wavelengths_nm: np.ndarray
    magnitude: np.ndarray  # shape (len(wavelengths), len(z))


class FieldSolution:
    """Forward/backward plane-wave amplitudes in every region of the stack.

    Region ``j`` for ``j < N`` is layer j; region ``N`` is the exit medium.
    Within a region, ``E(z) = A exp(i k z) + B exp(-i k z)`` with z measured
    from the region's front boundary.  Incident amplitude is 1.

    Amplitudes are anchored at the exit (``A = t``, ``B = 0``) and carried
    back to the front through tangential E and H.  Sweeping the other way,
    starting from ``1 + r``, amplifies roundoff by ``exp(2 Im delta)`` in
    absorbing layers.
    """

    def __init__(self, db: MaterialDb, s: Structure, wl: np.ndarray, amb: AmbientConfig):
        self.wavelengths = wl
        indices, r, t = _coefficients(db, s, wl, amb)
        self.r, self.t = r, t
        self.boundaries = np.concatenate([[0.0], np.cumsum(s.thicknesses)])
        self.indices = indices + [np.full(wl.shape, amb.exit_index)]
        n_layers = len(indices)
        self.A = [None] * (n_layers + 1)
        self.B = [None] * (n_layers + 1)
        self.A[n_layers] = t
        self.B[n_layers] = np.zeros_like(t)
        E, H = t, amb.exit_index * t
        for j in range(n_layers - 1, -1, -1):
            n = self.indices[j]
            delta = 2.0 * np.pi * n * s.thicknesses[j] / wl
            a = 0.5 * (E + H / n) * np.exp(-1j * delta)
            b = 0.5 * (E - H / n) * np.exp(1j * delta)
            self.A[j], self.B[j] = a, b
            E, H = a + b, n * (a - b)

    @property
    def n_layers(self) -> int:
        return len(self.indices) - 1

    def region_of(self, z: float) -> int:
        return int(min(np.searchsorted(self.boundaries, z, side="right") - 1, self.n_layers))

    def field(self, region: int, local_z: float) -> np.ndarray:
        """Complex E at ``local_z`` nm past the front of ``region``."""
        phase = 2.0 * np.pi * self.indices[region] * local_z / self.wavelengths
        return self.A[region] * np.exp(1j * phase) + self.B[region] * np.exp(-1j * phase)

    def at(self, z: float) -> np.ndarray:
        region = self.region_of(z)
        return self.field(region, z - self.boundaries[region])


def z_samples(total_thickness_nm: float, z_step_nm: float) -> np.ndarray:
    if not z_step_nm > 0:
        raise ConfigError("z_step_nm must be positive")
    n_steps = math.ceil(total_thickness_nm / z_step_nm - 1e-12) if total_thickness_nm > 0 else 0
    return z_step_nm * np.arange(n_steps + 1, dtype=np.float64)


def field_distribution(
    db: MaterialDb,
    s: Structure,
    grid: WavelengthGrid | None = None,
    amb: AmbientConfig | None = None,
    z_step_nm: float = 1.0,
) -> FieldMap:
    """``|E(z, lambda)|`` on ``z = 0, dz, ...`` covering the whole stack."""
    grid = grid or WavelengthGrid()
    amb = amb or AmbientConfig()
    z = z_samples(s.total_thickness, z_step_nm)
    sol = FieldSolution(db, s, grid.wavelengths, amb)
    mag = np.empty((grid.count, z.size))
    for col, zz in enumerate(z):
        mag[:, col] = np.abs(sol.at(zz))
    if not np.all(np.isfinite(mag)):
        raise NonFiniteResult("non-finite field amplitude")
    return FieldMap(z, grid.wavelengths, mag)
