"""Multilayer thin-film spectra: transfer-matrix solver, structure tokens and a
transformer surrogate trained on solver output."""

from .materials import Material, MaterialDb, load_material_db, refractive_index, toy_material_db
from .serialization import Vocabulary, detokenize, production_vocabulary, tokenize, toy_vocabulary, vocab_label
from .tmm import AmbientConfig, Spectrum, Structure, WavelengthGrid, field_distribution, simulate, simulate_batch

__version__ = "0.1.0"

__all__ = [
    "AmbientConfig",
    "Material",
    "MaterialDb",
    "Spectrum",
    "Structure",
    "Vocabulary",
    "WavelengthGrid",
    "detokenize",
    "field_distribution",
    "load_material_db",
    "production_vocabulary",
    "refractive_index",
    "simulate",
    "simulate_batch",
    "tokenize",
    "toy_material_db",
    "toy_vocabulary",
    "vocab_label",
]
