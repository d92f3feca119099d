import numpy as np
import pytest

from layerformer.materials import Material, MaterialDb, constant_material, toy_material_db
from layerformer.serialization import toy_vocabulary
from layerformer.tmm import Structure


def dispersive_materials():
    """Lossless and lossy materials with wavelength-dependent indices."""
    wl = np.arange(380.0, 1121.0, 20.0)
    glassy = Material("disp_glass", wl, 1.45 + 3.0e3 / wl**2, np.zeros_like(wl), production=False)
    metal = Material("disp_metal", wl, 0.05 + 2e-4 * wl, 2.0 + 6e-3 * wl, production=False)
    return [glassy, metal]


@pytest.fixture(scope="session")
def toy_db():
    return toy_material_db()


@pytest.fixture(scope="session")
def toy_vocab():
    return toy_vocabulary()


@pytest.fixture(scope="session")
def mixed_db():
    """Toy materials plus dispersive ones; ids 0..4."""
    return toy_material_db(extra=dispersive_materials())


@pytest.fixture(scope="session")
def lossless_db():
    wl = np.arange(400.0, 1101.0, 25.0)
    mats = [
        constant_material("a_n1.38", 1.38),
        constant_material("b_n2.35", 2.35),
        Material("c_disp", wl, 1.6 + 2.0e4 / wl**2, np.zeros_like(wl), production=False),
        constant_material("d_n3.5", 3.5),
    ]
    return MaterialDb(tuple(mats))


def random_structure(rng, n_materials, max_layers=20, continuous=True):
    n = int(rng.integers(1, max_layers + 1))
    mats = rng.integers(0, n_materials, size=n)
    if continuous:
        th = rng.uniform(10.0, 500.0, size=n)
    else:
        th = rng.integers(1, 51, size=n) * 10.0
    return Structure(tuple(zip(mats.tolist(), th.tolist())))


@pytest.fixture(scope="session")
def toy_sets(tmp_path_factory, toy_db, toy_vocab):
    """Small toy train/val files plus a 32-record memorization set."""
    from layerformer.datagen import SamplerConfig, generate_dataset

    root = tmp_path_factory.mktemp("toy_sets")
    paths = {}
    for name, count, seed in (("train", 2000, 1), ("val", 300, 2), ("overfit", 32, 3)):
        paths[name] = root / f"{name}.jsonl"
        generate_dataset(toy_db, toy_vocab, SamplerConfig(max_layers=4, count=count, seed=seed), paths[name])
    return paths


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
