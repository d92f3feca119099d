"""Random structure sampling and labeled dataset files.

A dataset is a JSON Lines file, one record per line::

    {"tokens": [...], "materials": [...], "thicknesses_nm": [...], "R": [...], "T": [...]}

plus a sidecar ``<file>.manifest.json`` holding the seed, sampler config,
grid/ambient, vocabulary manifest, record count and the file's SHA-256.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataIntegrityError, ManifestMismatch
from .materials import MaterialDb
from .serialization import Vocabulary, detokenize, pad_batch, tokenize
from .tmm import MAX_LAYERS, AmbientConfig, Structure, WavelengthGrid, simulate, simulate_batch

log = logging.getLogger(__name__)

DEFAULT_TRAIN_COUNT = 50_000
DEFAULT_VAL_COUNT = 5_000
MANIFEST_SUFFIX = ".manifest.json"
_CHUNK = 2048


@dataclass(frozen=True)
class SamplerConfig:
    max_layers: int = MAX_LAYERS
    layer_count_weights: tuple[float, ...] | None = None  # default: weight N for N layers
    seed: int = 0
    count: int = DEFAULT_TRAIN_COUNT
    dedup: bool = False

    def __post_init__(self):
        if self.max_layers < 1:
            raise ConfigError("max_layers must be >= 1")
        if self.count < 0 or self.seed < 0:
            raise ConfigError("count and seed must be non-negative")
        w = self.layer_count_weights
        if w is None:
            w = tuple(float(n) for n in range(1, self.max_layers + 1))
        w = tuple(float(x) for x in w)
        if len(w) != self.max_layers:
            raise ConfigError(f"need {self.max_layers} layer-count weights, got {len(w)}")
        if any(x < 0 or not math.isfinite(x) for x in w) or sum(w) == 0:
            raise ConfigError("layer-count weights must be non-negative and not all zero")
        object.__setattr__(self, "layer_count_weights", w)

    @property
    def probabilities(self) -> np.ndarray:
        w = np.asarray(self.layer_count_weights)
        return w / w.sum()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_count_weights"] = list(self.layer_count_weights)
        return d


def sample_structure(cfg: SamplerConfig, rng: np.random.Generator, vocab: Vocabulary) -> Structure:
    """One structure: layer count from the weights, then materials and
    thickness bins uniformly and independently per layer."""
    n_layers = int(rng.choice(cfg.max_layers, p=cfg.probabilities)) + 1
    materials = rng.integers(0, vocab.num_materials, size=n_layers)
    bins = rng.integers(0, vocab.bin_count, size=n_layers)
    return Structure(
        tuple((int(m), vocab.thickness_bins[b]) for m, b in zip(materials, bins)),
        max_layers=cfg.max_layers,
    )


def sample_structures(cfg: SamplerConfig, vocab: Vocabulary) -> Iterator[Structure]:
    """``cfg.count`` structures from a single RNG stream seeded by ``cfg.seed``."""
    if cfg.max_layers > vocab.max_layers:
        raise ConfigError(f"sampler max_layers {cfg.max_layers} > vocabulary max_layers {vocab.max_layers}")
    rng = np.random.default_rng(cfg.seed)
    seen = set()
    produced = 0
    while produced < cfg.count:
        s = sample_structure(cfg, rng, vocab)
        if cfg.dedup:
            if s.layers in seen:
                continue
            seen.add(s.layers)
        produced += 1
        yield s


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def format_record(vocab: Vocabulary, s: Structure, R: np.ndarray, T: np.ndarray) -> str:
    tokens = ",".join(str(t) for t in tokenize(vocab, s))
    names = ",".join(json.dumps(vocab.material_names[m]) for m in s.materials)
    thick = ",".join(_fmt(t) for t in s.thicknesses)
    r = ",".join(_fmt(x) for x in R)
    t = ",".join(_fmt(x) for x in T)
    return f'{{"tokens":[{tokens}],"materials":[{names}],"thicknesses_nm":[{thick}],"R":[{r}],"T":[{t}]}}\n'


def _ambient_dict(amb: AmbientConfig) -> dict:
    return {
        "incident_index": [amb.incident_index.real, amb.incident_index.imag],
        "exit_index": [amb.exit_index.real, amb.exit_index.imag],
    }


def ambient_from_dict(d: dict) -> AmbientConfig:
    return AmbientConfig(complex(*d["incident_index"]), complex(*d["exit_index"]))


def _grid_dict(grid: WavelengthGrid) -> dict:
    return {"start_nm": grid.start_nm, "stop_nm": grid.stop_nm, "step_nm": grid.step_nm}


def grid_from_dict(d: dict) -> WavelengthGrid:
    return WavelengthGrid(d["start_nm"], d["stop_nm"], d["step_nm"])


def manifest_path(data_path) -> Path:
    data_path = Path(data_path)
    return data_path.with_name(data_path.name + MANIFEST_SUFFIX)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def check_db_matches_vocab(db: MaterialDb, vocab: Vocabulary) -> None:
    if tuple(db.names) != vocab.material_names:
        raise ManifestMismatch(f"material db {db.names} does not match vocabulary {list(vocab.material_names)}")


def generate_dataset(
    db: MaterialDb,
    vocab: Vocabulary,
    cfg: SamplerConfig,
    out_path,
    grid: WavelengthGrid | None = None,
    amb: AmbientConfig | None = None,
    workers: int | None = None,
) -> dict:
    """Sample, label with the transfer-matrix solver and write a dataset file.

    Returns the manifest, which is also written beside the data file.
    """
    grid = grid or WavelengthGrid()
    amb = amb or AmbientConfig()
    check_db_matches_vocab(db, vocab)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    written = 0
    structures = sample_structures(cfg, vocab)
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        while True:
            chunk = [s for _, s in zip(range(_CHUNK), structures)]
            if not chunk:
                break
            try:
                spectra = simulate_batch(db, chunk, grid, amb, workers)
            except Exception as exc:
                idx = getattr(exc, "index", None)
                if idx is not None:
                    exc.index = written + idx
                log.error("labeling failed at record %s", getattr(exc, "index", "?"))
                raise
            for s, sp in zip(chunk, spectra):
                fh.write(format_record(vocab, s, sp.R, sp.T))
            written += len(chunk)
            log.debug("wrote %d/%d records", written, cfg.count)

    settings = {"sampler": cfg.to_dict(), "grid": _grid_dict(grid), "ambient": _ambient_dict(amb)}
    manifest = {
        "format": "layerformer-dataset/1",
        "data_file": out_path.name,
        "seed": cfg.seed,
        "record_count": written,
        **settings,
        "config_hash": hashlib.sha256(json.dumps(settings, sort_keys=True).encode()).hexdigest(),
        "materials_digest": db.digest(),
        "vocab_manifest": vocab.manifest(),
        "vocab_manifest_hash": vocab.manifest_hash(),
        "sha256": file_sha256(out_path),
    }
    write_manifest(out_path, manifest)
    return manifest


def write_manifest(data_path, manifest: dict) -> None:
    with open(manifest_path(data_path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(data_path) -> dict:
    path = manifest_path(data_path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataIntegrityError(f"missing manifest {path}") from None


def verify_checksum(data_path) -> dict:
    """Manifest of ``data_path`` after checking the file's SHA-256 against it."""
    manifest = read_manifest(data_path)
    actual = file_sha256(data_path)
    if actual != manifest.get("sha256"):
        raise DataIntegrityError(f"{data_path}: sha256 {actual} != manifest {manifest.get('sha256')}")
    return manifest


def iter_records(data_path) -> Iterator[dict]:
    with open(data_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def split_dataset(data_path, val_fraction: float, train_out, val_out) -> tuple[dict, dict]:
    """Partition records into two files by a hash of the record index.

    Disjoint by record; structurally identical records are not merged.
    """
    if not 0.0 <= val_fraction <= 1.0:
        raise ConfigError("val_fraction must be in [0, 1]")
    source = verify_checksum(data_path)
    threshold = int(val_fraction * 2**64)
    counts = {"train": 0, "val": 0}
    with open(data_path, encoding="utf-8") as src, open(train_out, "w", encoding="utf-8", newline="\n") as tr, open(
        val_out, "w", encoding="utf-8", newline="\n"
    ) as va:
        for index, line in enumerate(src):
            digest = hashlib.sha256(str(index).encode()).digest()
            to_val = int.from_bytes(digest[:8], "little") < threshold
            (va if to_val else tr).write(line)
            counts["val" if to_val else "train"] += 1
    manifests = []
    for split, path in (("train", Path(train_out)), ("val", Path(val_out))):
        m = dict(source)
        m.update(
            data_file=path.name,
            record_count=counts[split],
            sha256=file_sha256(path),
            split={"name": split, "val_fraction": val_fraction, "source": source["data_file"]},
        )
        write_manifest(path, m)
        manifests.append(m)
    return manifests[0], manifests[1]


@dataclass
class DatasetArrays:
    ids: np.ndarray  # (n, max_seq_len) padded with EoS
    lengths: np.ndarray
    targets: np.ndarray  # (n, 2 * grid.count): R then T
    manifest: dict = field(repr=False)

    def __len__(self) -> int:
        return len(self.lengths)


def load_arrays(data_path, verify: bool = True) -> DatasetArrays:
    manifest = verify_checksum(data_path) if verify else read_manifest(data_path)
    vocab = Vocabulary.from_manifest(manifest["vocab_manifest"])
    seqs, targets = [], []
    for rec in iter_records(data_path):
        seqs.append(rec["tokens"])
        targets.append(rec["R"] + rec["T"])
    ids, lengths = pad_batch(seqs, vocab.max_seq_len)
    width = 2 * grid_from_dict(manifest["grid"]).count
    tgt = np.asarray(targets, dtype=np.float64).reshape(len(seqs), width)
    return DatasetArrays(ids, lengths, tgt, manifest)


def record_structure(vocab: Vocabulary, db: MaterialDb, rec: dict) -> Structure:
    """Structure stored in a record; its tokens must decode to the same layers."""
    s = Structure.from_lists([db.id_of(n) for n in rec["materials"]], rec["thicknesses_nm"], max_layers=vocab.max_layers)
    if detokenize(vocab, rec["tokens"]).layers != s.layers:
        raise DataIntegrityError(f"tokens {rec['tokens']} do not decode to the stored structure")
    return s


def validate_dataset(
    data_path,
    db: MaterialDb,
    fraction: float = 0.01,
    seed: int = 0,
    tol: float = 1e-12,
) -> dict:
    """Checksum the file and re-simulate a random sample of its records.

    Returns a report; ``report["ok"]`` is False if any sampled record
    disagrees with the solver by more than ``tol`` or fails to decode.
    """
    manifest = verify_checksum(data_path)
    vocab = Vocabulary.from_manifest(manifest["vocab_manifest"])
    check_db_matches_vocab(db, vocab)
    grid = grid_from_dict(manifest["grid"])
    amb = ambient_from_dict(manifest["ambient"])
    n = manifest["record_count"]
    k = min(n, max(1, math.ceil(fraction * n))) if n else 0
    picked = set(np.random.default_rng(seed).choice(n, size=k, replace=False).tolist()) if k else set()

    failures, max_err, seen = [], 0.0, 0
    for index, rec in enumerate(iter_records(data_path)):
        seen += 1
        if index not in picked:
            continue
        try:
            s = record_structure(vocab, db, rec)
        except Exception as exc:
            failures.append({"index": index, "error": str(exc)})
            continue
        sp = simulate(db, s, grid, amb)
        err = max(np.max(np.abs(sp.R - rec["R"])), np.max(np.abs(sp.T - rec["T"])))
        max_err = max(max_err, float(err))
        if not err <= tol:
            failures.append({"index": index, "error": f"label mismatch {err:.3e}"})
    if seen != n:
        failures.append({"index": None, "error": f"file has {seen} records, manifest says {n}"})
    return {
        "path": str(data_path),
        "records": n,
        "checked": len(picked),
        "max_abs_error": max_err,
        "tolerance": tol,
        "failures": failures,
        "ok": not failures,
    }


def structure_from_json(spec: dict, db: MaterialDb) -> Structure:
    """``{"layers": [{"material": name, "thickness_nm": x}, ...]}`` -> Structure."""
    layers = spec.get("layers")
    if not isinstance(layers, list):
        raise ConfigError('structure JSON needs a "layers" list')
    return Structure(tuple((db.id_of(l["material"]), float(l["thickness_nm"])) for l in layers))


def spectra_matrix(spectra: Sequence) -> np.ndarray:
    return np.stack([sp.flat() for sp in spectra]) if spectra else np.empty((0, 0))
