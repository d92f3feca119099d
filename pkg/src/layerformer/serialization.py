"""Structure <-> token sequence mapping.

Token ids: ``BOS = 0``, ``EOS = 1``, then one id per (material, thickness bin)
pair, ``2 + material * n_bins + bin``.  A structure of N layers becomes
``[BOS, t_1, ..., t_N, EOS]``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BadId, ConfigError, MalformedSequence, MaterialOutOfVocab, OutOfRange, TooManyLayers
from .tmm import MAX_LAYERS, Structure

BOS = 0
EOS = 1
SPECIALS = {"BoS": BOS, "EoS": EOS}
N_SPECIALS = len(SPECIALS)


def uniform_bins(start: float, stop: float, step: float) -> tuple[float, ...]:
    count = int(round((stop - start) / step)) + 1
    return tuple(float(start + i * step) for i in range(count))


@dataclass(frozen=True)
class Vocabulary:
    material_names: tuple[str, ...]
    thickness_bins: tuple[float, ...] = uniform_bins(10, 500, 10)
    max_layers: int = MAX_LAYERS

    def __post_init__(self):
        object.__setattr__(self, "material_names", tuple(self.material_names))
        object.__setattr__(self, "thickness_bins", tuple(float(b) for b in self.thickness_bins))
        if not self.material_names:
            raise ConfigError("vocabulary needs at least one material")
        if len(set(self.material_names)) != len(self.material_names):
            raise ConfigError("duplicate material names in vocabulary")
        if not self.thickness_bins or any(b <= a for a, b in zip(self.thickness_bins, self.thickness_bins[1:])):
            raise ConfigError("thickness bins must be non-empty and strictly ascending")
        if self.max_layers < 1:
            raise ConfigError("max_layers must be >= 1")

    @property
    def num_materials(self) -> int:
        return len(self.material_names)

    @property
    def bin_count(self) -> int:
        return len(self.thickness_bins)

    @property
    def structure_token_count(self) -> int:
        """Layer tokens plus EoS, the count quoted for the production vocabulary."""
        return self.num_materials * self.bin_count + 1

    @property
    def total_size(self) -> int:
        return N_SPECIALS + self.num_materials * self.bin_count

    @property
    def max_seq_len(self) -> int:
        return self.max_layers + 2

    def token_id(self, material: int, bin_index: int) -> int:
        if not 0 <= material < self.num_materials:
            raise MaterialOutOfVocab(f"material {material} not in vocabulary")
        if not 0 <= bin_index < self.bin_count:
            raise BadId(f"bin {bin_index} outside [0, {self.bin_count})")
        return N_SPECIALS + material * self.bin_count + bin_index

    def split_id(self, token: int) -> tuple[int, int]:
        """Inverse of :meth:`token_id` for structure tokens."""
        if not N_SPECIALS <= token < self.total_size:
            raise BadId(f"{token} is not a structure token")
        return divmod(token - N_SPECIALS, self.bin_count)

    def snap(self, thickness_nm: float) -> int:
        """Nearest bin index; exact ties go to the thicker bin."""
        bins = np.asarray(self.thickness_bins)
        gaps = np.diff(bins)
        lo_edge = bins[0] - (gaps[0] / 2 if gaps.size else 0.0)
        hi_edge = bins[-1] + (gaps[-1] / 2 if gaps.size else 0.0)
        if not lo_edge <= thickness_nm <= hi_edge:
            raise OutOfRange(f"thickness {thickness_nm} nm outside vocabulary bins")
        dist = np.abs(bins - thickness_nm)
        return int(np.flatnonzero(dist == dist.min())[-1])

    def manifest(self) -> dict:
        return {
            "material_names": list(self.material_names),
            "thickness_bins_nm": list(self.thickness_bins),
            "max_layers": self.max_layers,
            "specials": dict(SPECIALS),
        }

    def manifest_bytes(self) -> bytes:
        return manifest_bytes(self.manifest())

    def manifest_hash(self) -> str:
        return hashlib.sha256(self.manifest_bytes()).hexdigest()

    @classmethod
    def from_manifest(cls, manifest: dict) -> "Vocabulary":
        if manifest.get("specials") != SPECIALS:
            raise ConfigError(f"unsupported specials {manifest.get('specials')}")
        return cls(
            tuple(manifest["material_names"]),
            tuple(manifest["thickness_bins_nm"]),
            int(manifest.get("max_layers", MAX_LAYERS)),
        )


def manifest_bytes(manifest: dict) -> bytes:
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()


def toy_vocabulary(material_names: Sequence[str] = ("toy_absorber", "toy_n1.5", "toy_n2.0")) -> Vocabulary:
    """Desk-scale preset: 3 materials x 10 bins (50..500 nm), at most 4 layers."""
    return Vocabulary(tuple(material_names), uniform_bins(50, 500, 50), max_layers=4)


def production_vocabulary(material_names: Sequence[str]) -> Vocabulary:
    """50 bins of 10 nm from 10 to 500 nm, up to 20 layers."""
    return Vocabulary(tuple(material_names), uniform_bins(10, 500, 10), max_layers=MAX_LAYERS)


def tokenize(vocab: Vocabulary, s: Structure) -> list[int]:
    if len(s) == 0:
        raise MalformedSequence("cannot tokenize an empty structure")
    if len(s) > vocab.max_layers:
        raise TooManyLayers(f"{len(s)} layers > {vocab.max_layers}")
    ids = [BOS]
    for material, thickness in s.layers:
        ids.append(vocab.token_id(material, vocab.snap(thickness)))
    ids.append(EOS)
    return ids


def check_sequence(vocab: Vocabulary, ids: Sequence[int]) -> None:
    ids = list(ids)
    if len(ids) < 3:
        raise MalformedSequence(f"need BoS, at least one layer token and EoS; got {ids}")
    if ids[0] != BOS or ids[-1] != EOS:
        raise MalformedSequence("sequence must start with BoS and end with EoS")
    if len(ids) > vocab.max_seq_len:
        raise TooManyLayers(f"{len(ids) - 2} layers > {vocab.max_layers}")
    for tok in ids[1:-1]:
        if not N_SPECIALS <= tok < vocab.total_size:
            raise MalformedSequence(f"unexpected token {tok} inside sequence")


def detokenize(vocab: Vocabulary, ids: Sequence[int]) -> Structure:
    check_sequence(vocab, ids)
    layers = []
    for tok in ids[1:-1]:
        material, bin_index = vocab.split_id(tok)
        layers.append((material, vocab.thickness_bins[bin_index]))
    return Structure(tuple(layers), max_layers=vocab.max_layers)


def vocab_label(vocab: Vocabulary, token: int) -> tuple[str, float | None]:
    if not 0 <= token < vocab.total_size:
        raise BadId(f"token {token} outside [0, {vocab.total_size})")
    if token == BOS:
        return ("BoS", None)
    if token == EOS:
        return ("EoS", None)
    material, bin_index = vocab.split_id(token)
    return (vocab.material_names[material], vocab.thickness_bins[bin_index])


def pad_batch(seqs: Sequence[Sequence[int]], length: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad with EoS. Returns ``(ids[batch, length], lengths[batch])``."""
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    width = int(lengths.max(initial=0)) if length is None else int(length)
    if lengths.size and width < lengths.max():
        raise ConfigError(f"pad length {width} shorter than longest sequence")
    out = np.full((len(seqs), width), EOS, dtype=np.int64)
    for row, seq in enumerate(seqs):
        out[row, : len(seq)] = seq
    return out, lengths
