"""Surrogate accuracy (global and per structure family) and timing benchmark."""

from __future__ import annotations

import json
import platform
import statistics
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint, load_checkpoint
from .datagen import SamplerConfig, check_db_matches_vocab, load_arrays, sample_structures
from .errors import ConfigError, ManifestMismatch
from .materials import MaterialDb
from .serialization import Vocabulary, manifest_bytes, pad_batch, tokenize
from .surrogate import forward_tensors
from .tmm import AmbientConfig, Structure, WavelengthGrid, simulate, simulate_batch
from .trainer import mean_record_mse, predict_arrays

# Published single-structure timings and accuracy, kept for reference only.
PUBLISHED_REFERENCE = {
    "single_oracle_s": 0.057,
    "single_model_s": 0.010,
    "batch_model_s_per_item": 0.000015,
    "batch_size": 1000,
    "speedup_single": 5.7,
    "speedup_batch": 3800,
    "mse_global": 0.000057,
}

MSE_DEFINITION = "mean over records of the mean over all R and T points of (clamp(pred, 0, 1) - target)^2"


def _as_checkpoint(checkpoint) -> Checkpoint:
    return checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)


def eval_mse(checkpoint, dataset_path) -> float:
    """Mean per-record MSE of the clamped surrogate prediction on a dataset."""
    ck = _as_checkpoint(checkpoint)
    data = load_arrays(dataset_path)
    if manifest_bytes(data.manifest["vocab_manifest"]) != manifest_bytes(ck.vocab_manifest):
        raise ManifestMismatch("dataset and checkpoint vocabularies differ")
    if data.targets.shape[1] != ck.config.output_dim:
        raise ManifestMismatch("dataset spectra width differs from model output")
    pred = predict_arrays(ck.params, ck.config, data.ids, data.lengths)
    return mean_record_mse(pred, data.targets)


@dataclass(frozen=True)
class FamilySpec:
    """Fixed material sequence; each layer's thickness ranges over the
    vocabulary bins inside ``thickness_ranges_nm[i]`` (inclusive)."""

    name: str
    materials: tuple[str, ...]
    thickness_ranges_nm: tuple[tuple[float, float], ...]
    count: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "materials", tuple(self.materials))
        object.__setattr__(self, "thickness_ranges_nm", tuple((float(a), float(b)) for a, b in self.thickness_ranges_nm))
        if len(self.materials) != len(self.thickness_ranges_nm):
            raise ConfigError(f"{self.name}: one thickness range per layer required")
        if any(a > b for a, b in self.thickness_ranges_nm):
            raise ConfigError(f"{self.name}: empty thickness range")

    @classmethod
    def from_dict(cls, d: dict) -> "FamilySpec":
        mats = d["materials"]
        ranges = d.get("thickness_ranges_nm") or [d.get("thickness_range_nm", [10, 500])] * len(mats)
        return cls(d["name"], tuple(mats), tuple(tuple(r) for r in ranges), int(d.get("count", 1000)))


def _family(name: str, materials: Sequence[str]) -> FamilySpec:
    return FamilySpec(name, tuple(materials), ((10.0, 500.0),) * len(materials))


# The six evaluation families; needs a production material set providing these names.
BENCHMARK_FAMILIES = (
    _family("Ag/SiO2/Ag", ["Ag", "SiO2", "Ag"]),
    _family("MgF2/SiO2/Al2O3/TiO2/Si/Ge", ["MgF2", "SiO2", "Al2O3", "TiO2", "Si", "Ge"]),
    _family("(SiO2/Si3N4)x3", ["SiO2", "Si3N4"] * 3),
    _family("TiO2/SiO2/Al2O3/Si3N4/ZnO/ZnS/ITO/HfO2/Si",
            ["TiO2", "SiO2", "Al2O3", "Si3N4", "ZnO", "ZnS", "ITO", "HfO2", "Si"]),
    _family("ZnS/TiO2/MgO/ZnS/Si3N4/ITO/SiO2/TiO2/Ta2O5/ZnO/Al2O3/Ag",
            ["ZnS", "TiO2", "MgO", "ZnS", "Si3N4", "ITO", "SiO2", "TiO2", "Ta2O5", "ZnO", "Al2O3", "Ag"]),
    _family("(SiO2/Si3N4)x10", ["SiO2", "Si3N4"] * 10),
)


def load_families(path) -> list[FamilySpec]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    items = data["families"] if isinstance(data, dict) else data
    return [FamilySpec.from_dict(d) for d in items]


@dataclass(frozen=True)
class FamilyResult:
    name: str
    layers: int
    mse: float
    count: int


def sample_family(fam: FamilySpec, vocab: Vocabulary, db: MaterialDb, count: int,
                  rng: np.random.Generator) -> list[Structure]:
    if len(fam.materials) > vocab.max_layers:
        raise ConfigError(f"{fam.name}: {len(fam.materials)} layers > vocabulary max {vocab.max_layers}")
    ids = [db.id_of(m) for m in fam.materials]
    bins = np.asarray(vocab.thickness_bins)
    choices = []
    for lo, hi in fam.thickness_ranges_nm:
        allowed = bins[(bins >= lo) & (bins <= hi)]
        if allowed.size == 0:
            raise ConfigError(f"{fam.name}: no thickness bin inside [{lo}, {hi}]")
        choices.append(allowed)
    out = []
    for _ in range(count):
        out.append(Structure(tuple((m, float(rng.choice(c))) for m, c in zip(ids, choices)), max_layers=vocab.max_layers))
    return out


def eval_families(
    checkpoint,
    families: Sequence[FamilySpec],
    db: MaterialDb,
    per_family_count: int | None = None,
    seed: int = 0,
    grid: WavelengthGrid | None = None,
    amb: AmbientConfig | None = None,
) -> list[FamilyResult]:
    """Per-family MSE: sample thicknesses with the materials fixed, label with
    the solver, compare to the clamped surrogate prediction."""
    ck = _as_checkpoint(checkpoint)
    vocab = ck.vocab
    check_db_matches_vocab(db, vocab)
    grid = grid or WavelengthGrid()
    if 2 * grid.count != ck.config.output_dim:
        raise ManifestMismatch("grid size does not match model output")
    rng = np.random.default_rng(seed)
    results = []
    for fam in families:
        count = fam.count if per_family_count is None else per_family_count
        if count < 1:
            raise ConfigError(f"{fam.name}: family sample count must be >= 1")
        structures = sample_family(fam, vocab, db, count, rng)
        targets = np.stack([sp.flat() for sp in simulate_batch(db, structures, grid, amb)])
        ids, lengths = pad_batch([tokenize(vocab, s) for s in structures], vocab.max_seq_len)
        pred = predict_arrays(ck.params, ck.config, ids, lengths)
        results.append(FamilyResult(fam.name, len(fam.materials), mean_record_mse(pred, targets), count))
    return results


def format_family_table(results: Sequence[FamilyResult]) -> str:
    width = max([len("Structure")] + [len(r.name) for r in results])
    lines = [f"{'Structure':<{width}}  Layers  MSE", f"{'-' * width}  ------  ---------"]
    lines += [f"{r.name:<{width}}  {r.layers:>6}  {r.mse:.3e}" for r in results]
    return "\n".join(lines)


@dataclass(frozen=True)
class BenchReport:
    single_oracle_s: float
    single_model_s: float
    batch_model_s_per_item: float
    speedup_single: float
    speedup_batch: float
    mse_global: float | None
    batch_size: int
    repetitions: int
    n_single: int
    hardware: str
    published_reference: dict
    mse_definition: str = MSE_DEFINITION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def table(self) -> str:
        ref = self.published_reference
        mse = "-" if self.mse_global is None else f"{self.mse_global:.3g}"
        rows = [
            ("Single simulation (s)", f"{self.single_oracle_s:.3g}", f"{self.single_model_s:.3g}", f"{self.speedup_single:.3g}"),
            (f"Batch simulation (s), batch={self.batch_size}", "-", f"{self.batch_model_s_per_item:.3g}",
             f"{self.speedup_batch:.3g}"),
            ("MSE", "-", mse, "-"),
        ]
        out = [f"{'Attribute':<36}{'TMM':>12}{'Surrogate':>12}{'Speedup':>10}"]
        out += [f"{a:<36}{b:>12}{c:>12}{d:>10}" for a, b, c, d in rows]
        out.append(
            f"reference: TMM {ref['single_oracle_s']} s, surrogate {ref['single_model_s']} s / "
            f"{ref['batch_model_s_per_item']} s per item, speedups {ref['speedup_single']}x / {ref['speedup_batch']}x"
        )
        out.append(f"hardware: {self.hardware}")
        return "\n".join(out)


def hardware_note() -> str:
    return (f"{platform.machine()} {platform.processor() or 'cpu'}; python {platform.python_version()}; "
            f"torch {torch.__version__} threads={torch.get_num_threads()}; device=cpu")


def median_time(fn: Callable[[], object], repetitions: int) -> float:
    """Median wall time of ``repetitions`` calls after one untimed warmup."""
    fn()
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench(
    checkpoint,
    db: MaterialDb,
    n_single: int = 20,
    batch_size: int = 1000,
    repetitions: int = 5,
    seed: int = 0,
    grid: WavelengthGrid | None = None,
    amb: AmbientConfig | None = None,
    mse_global: float | None = None,
) -> BenchReport:
    """Time one-at-a-time solver calls, one-at-a-time surrogate calls and a
    batched surrogate call, each as the median over ``repetitions``."""
    if min(n_single, batch_size, repetitions) < 1:
        raise ConfigError("n_single, batch_size and repetitions must be >= 1")
    ck = _as_checkpoint(checkpoint)
    vocab = ck.vocab
    check_db_matches_vocab(db, vocab)
    grid = grid or WavelengthGrid()
    sampler = SamplerConfig(max_layers=vocab.max_layers, seed=seed, count=max(n_single, batch_size))
    structures = list(sample_structures(sampler, vocab))
    singles = structures[:n_single]
    seqs = [tokenize(vocab, s) for s in structures[:batch_size]]
    single_tensors = []
    for s in singles:
        ids, lengths = pad_batch([tokenize(vocab, s)])
        single_tensors.append((torch.from_numpy(ids), torch.from_numpy(lengths)))
    batch_ids, batch_lengths = (torch.from_numpy(a) for a in pad_batch(seqs))

    def oracle_singles():
        for s in singles:
            simulate(db, s, grid, amb)

    def model_singles():
        with torch.no_grad():
            for ids, lengths in single_tensors:
                forward_tensors(ck.params, ck.config, ids, lengths)

    def model_batch():
        with torch.no_grad():
            forward_tensors(ck.params, ck.config, batch_ids, batch_lengths)

    single_oracle = median_time(oracle_singles, repetitions) / n_single
    single_model = median_time(model_singles, repetitions) / len(single_tensors)
    batch_item = median_time(model_batch, repetitions) / batch_size
    return BenchReport(
        single_oracle_s=single_oracle,
        single_model_s=single_model,
        batch_model_s_per_item=batch_item,
        speedup_single=single_oracle / single_model,
        speedup_batch=single_oracle / batch_item,
        mse_global=mse_global,
        batch_size=batch_size,
        repetitions=repetitions,
        n_single=n_single,
        hardware=hardware_note(),
        published_reference=dict(PUBLISHED_REFERENCE),
    )
