"""The ten acceptance criteria, each at its stated tolerance and time budget.

Every test appends one ``PASS``/``FAIL`` line that is printed in the pytest
terminal summary (and to stdout when run with ``-s``).
"""

import contextlib
import json
import time

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE_LINES, random_structure
from layerformer.analysis import export_attention, read_matrix_csv
from layerformer.checkpoint import save_checkpoint
from layerformer.cli import main as cli_main
from layerformer.datagen import load_arrays, read_manifest, verify_checksum
from layerformer.evalbench import PUBLISHED_REFERENCE, bench
from layerformer.materials import write_toy_materials
from layerformer.serialization import (
    BOS,
    EOS,
    check_sequence,
    detokenize,
    pad_batch,
    production_vocabulary,
    tokenize,
)
from layerformer.surrogate import (
    ModelConfig,
    backward,
    forward,
    forward_tensors,
    init_params,
    loss_mse,
    param_count,
    production_config,
    tiny_config,
)
from layerformer.tmm import AmbientConfig, Structure, simulate
from layerformer.trainer import TrainConfig, mean_predictor_mse, train
from oracles.airy import airy_rt
from oracles.quarter_wave import bare_interface_reflectance, quarter_wave_reflectance

pytestmark = pytest.mark.acceptance


@contextlib.contextmanager
def criterion(number, title, budget_s):
    info = {}
    t0 = time.perf_counter()
    try:
        yield info
        elapsed = time.perf_counter() - t0
        assert elapsed < budget_s, f"took {elapsed:.1f} s, budget {budget_s} s"
    except BaseException as exc:
        line = f"FAIL {number}: {title} ({exc})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"{k}={v}" for k, v in info.items())
    line = f"PASS {number}: {title} [{elapsed:.1f} s{'; ' + detail if detail else ''}]"
    ACCEPTANCE_LINES.append(line)
    print(line)


def test_1_analytic_oracles(toy_db):
    with criterion(1, "TMM vs analytic oracles", 1.0) as info:
        amb = AmbientConfig(1.0, 1.5)
        bare = simulate(toy_db, Structure(()), amb=amb)
        err_bare = float(np.max(np.abs(bare.R - bare_interface_reflectance(1.0, 1.5))))
        assert err_bare <= 1e-12
        qw = simulate(toy_db, Structure(((toy_db.id_of("toy_n2.0"), 700.0 / 8),)), amb=amb)
        j = int(np.flatnonzero(qw.grid.wavelengths == 700.0)[0])
        expected = quarter_wave_reflectance(1.0, 2.0, 1.5)
        assert abs(expected - 0.20661) < 1e-5
        err_qw = abs(qw.R[j] - expected)
        assert err_qw <= 1e-6
        info.update(bare_err=f"{err_bare:.1e}", quarter_wave_err=f"{err_qw:.1e}")


def test_2_airy_equivalence(mixed_db):
    with criterion(2, "characteristic matrix vs Airy recursion, 1000 structures", 30.0) as info:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(1000):
            s = random_structure(rng, len(mixed_db))
            sp = simulate(mixed_db, s)
            R, T = airy_rt(mixed_db, s)
            worst = max(worst, float(np.max(np.abs(sp.R - R))), float(np.max(np.abs(sp.T - T))))
        assert worst < 1e-8
        info["max_diff"] = f"{worst:.1e}"


def test_3_energy_conservation(lossless_db):
    with criterion(3, "energy conservation, 1000 lossless stacks", 30.0) as info:
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(1000):
            sp = simulate(lossless_db, random_structure(rng, len(lossless_db)))
            assert sp.R.size == 71
            worst = max(worst, float(np.max(np.abs(sp.R + sp.T - 1))))
        assert worst < 1e-10
        info["max_abs(R+T-1)"] = f"{worst:.1e}"


def test_4_serialization():
    with criterion(4, "serialization bijection and round trips", 5.0) as info:
        vocab = production_vocabulary(tuple(f"m{i:02d}" for i in range(18)))
        assert vocab.structure_token_count == 18 * 50 + 1 == 901
        failures = 0
        seen = set()
        for tok in range(2, vocab.total_size):
            m, b = vocab.split_id(tok)
            failures += vocab.token_id(m, b) != tok
            seen.add((m, b))
            seq = [BOS, tok, EOS]
            failures += tokenize(vocab, detokenize(vocab, seq)) != seq
        failures += len(seen) != 18 * 50
        rng = np.random.default_rng(4)
        for _ in range(1000):
            n = int(rng.integers(1, 21))
            s = Structure(tuple(zip(rng.integers(0, 18, n).tolist(), (rng.integers(1, 51, n) * 10.0).tolist())))
            ids = tokenize(vocab, s)
            check_sequence(vocab, ids)
            failures += detokenize(vocab, ids) != s
        assert failures == 0
        info.update(structure_plus_eos=vocab.structure_token_count, failures=failures)


def test_5_gradient_check():
    with criterion(5, "backward vs central differences", 120.0) as info:
        cfg = ModelConfig(num_blocks=2, num_heads=2, hidden_dim=16, head_dims=(16, 16, 142),
                          max_seq_len=22, vocab_size=32, output_dim=142, seed=5, dtype="float64")
        rng = np.random.default_rng(5)
        params = {k: v + 0.1 * torch.from_numpy(rng.normal(size=tuple(v.shape)))
                  for k, v in init_params(cfg).items()}
        batch = [[BOS] + rng.integers(2, 32, size=int(rng.integers(1, 8))).tolist() + [EOS] for _ in range(3)]
        targets = rng.uniform(size=(3, 142))
        _, grads = backward(params, cfg, batch, targets)
        ids, lengths = (torch.from_numpy(a) for a in pad_batch(batch))
        tgt = torch.from_numpy(targets)

        def loss_at(p):
            with torch.no_grad():
                return float(loss_mse(forward_tensors(p, cfg, ids, lengths)[0], tgt))

        names = list(params)
        sizes = np.array([params[n].numel() for n in names], dtype=float)
        h, worst, probed = 1e-5, 0.0, 0
        for _ in range(100):
            name = names[rng.choice(len(names), p=sizes / sizes.sum())]
            flat = int(rng.integers(params[name].numel()))
            plus = dict(params)
            minus = dict(params)
            plus[name] = params[name].clone()
            minus[name] = params[name].clone()
            plus[name].view(-1)[flat] += h
            minus[name].view(-1)[flat] -= h
            fd = (loss_at(plus) - loss_at(minus)) / (2 * h)
            an = float(grads[name].view(-1)[flat])
            scale = max(abs(fd), abs(an))
            probed += 1
            if scale > 1e-9:
                worst = max(worst, abs(fd - an) / scale)
        assert probed == 100 and worst < 1e-4
        info["max_rel_err"] = f"{worst:.1e}"


@pytest.fixture(scope="module")
def toy_50k(tmp_path_factory):
    """55k toy records split into about 50k train / 5k validation via the CLI."""
    root = tmp_path_factory.mktemp("toy50k")
    mats = write_toy_materials(root / "mats")
    data = root / "toy.jsonl"
    code = cli_main(["gen-data", "--materials", str(mats), "--preset", "toy", "--count", "55000",
                     "--val-fraction", str(5000 / 55000), "--seed", "6", "--out", str(data)])
    assert code == 0
    return {"mats": mats, "all": data, "train": root / "toy.train.jsonl", "val": root / "toy.val.jsonl"}


def test_6_learning_signal(tmp_path, toy_50k, toy_sets):
    with criterion(6, "tiny model learns toy spectra; 32-sample overfit", 1800.0) as info:
        tr, va = load_arrays(toy_50k["train"]), load_arrays(toy_50k["val"])
        assert len(tr) >= 50_000
        baseline = mean_predictor_mse(tr, va)
        cfg = tiny_config(32, seed=6, dtype="float32")
        # the default recipe: Adam 3e-4, clip 1.0, batch 64, constant rate
        tc = TrainConfig(epochs=3, batch_size=64, learning_rate=3e-4, grad_clip_norm=1.0, seed=6,
                         eval_every=1000, checkpoint_dir=str(tmp_path / "run"))
        val_mse = train(tr, va, cfg, tc).last("val")
        assert val_mse < 0.01
        assert val_mse < baseline / 3

        tiny32 = load_arrays(toy_sets["overfit"])
        assert len(tiny32) == 32
        tc = TrainConfig(epochs=2000, max_steps=2000, batch_size=32, learning_rate=1e-2, final_lr_ratio=0.0,
                         grad_clip_norm=1.0, eval_every=10_000, checkpoint_dir=str(tmp_path / "overfit"))
        fit = train(tiny32, tiny32, tiny_config(32), tc)
        steps = max(s for s, split, _ in fit.history if split == "train")
        assert steps <= 2000 and fit.last("val") < 1e-4
        info.update(val_mse=f"{val_mse:.2e}", baseline=f"{baseline:.2e}",
                    overfit_mse=f"{fit.last('val'):.2e}", overfit_steps=steps)


def test_7_benchmark(tmp_path, toy_db, toy_vocab):
    with criterion(7, "benchmark report, batching amortizes", 300.0) as info:
        cfg = tiny_config(toy_vocab.total_size, seed=7)
        ck = save_checkpoint(init_params(cfg), cfg, toy_vocab.manifest(), tmp_path / "m.ckpt")
        report = bench(ck, toy_db, n_single=20, batch_size=1000, repetitions=5)
        assert report.speedup_single == report.single_oracle_s / report.single_model_s
        assert report.speedup_batch == report.single_oracle_s / report.batch_model_s_per_item
        assert report.published_reference == PUBLISHED_REFERENCE
        small = bench(ck, toy_db, n_single=20, batch_size=64, repetitions=5)
        for r in (report, small):
            assert r.batch_model_s_per_item < r.single_model_s
        (tmp_path / "bench.json").write_text(report.to_json())
        info.update(single_s=f"{report.single_model_s:.2e}", batch_per_item_s=f"{report.batch_model_s_per_item:.2e}",
                    batch64_per_item_s=f"{small.batch_model_s_per_item:.2e}")


def test_8_attention_and_padding(tmp_path, toy_vocab):
    with criterion(8, "attention rows sum to 1; padding invariance", 60.0) as info:
        cfg = tiny_config(toy_vocab.total_size, max_seq_len=9, seed=8)
        params = init_params(cfg)
        ck = save_checkpoint(params, cfg, toy_vocab.manifest(), tmp_path / "m.ckpt")
        rng = np.random.default_rng(8)
        worst_row = 0.0
        for _ in range(10):
            n = int(rng.integers(1, 5))
            s = Structure(tuple((int(m), float(t)) for m, t in
                                zip(rng.integers(0, 3, n), rng.choice(toy_vocab.thickness_bins, n))))
            for block in range(cfg.num_blocks):
                for head in range(cfg.num_heads):
                    export_attention(ck, s, block, head, tmp_path / "a.csv")
                    _, _, values = read_matrix_csv(tmp_path / "a.csv")
                    worst_row = max(worst_row, float(np.max(np.abs(np.sum(values, axis=1) - 1))))
        assert worst_row < 1e-6
        worst_pad = 0.0
        for _ in range(100):
            n = int(rng.integers(1, 5))
            seq = tokenize(toy_vocab, Structure(tuple((int(m), float(t)) for m, t in
                                                      zip(rng.integers(0, 3, n), rng.choice(toy_vocab.thickness_bins, n)))))
            a, _ = forward(params, cfg, [seq], pad_to=len(seq))
            b, _ = forward(params, cfg, [seq], pad_to=len(seq) + 3)
            worst_pad = max(worst_pad, float(np.max(np.abs(a - b))))
        assert worst_pad < 1e-10
        info.update(max_row_err=f"{worst_row:.1e}", max_pad_diff=f"{worst_pad:.1e}")


def test_9_data_integrity(toy_50k, capsys):
    with criterion(9, "validate-data audit and manifest checksums", 120.0) as info:
        capsys.readouterr()
        code = cli_main(["validate-data", "--materials", str(toy_50k["mats"]), "--data", str(toy_50k["all"]),
                         "--fraction", "0.01"])
        out = capsys.readouterr().out
        assert code == 0, out
        report = json.loads(out)
        assert report["ok"] and report["checked"] == 550 and report["max_abs_error"] <= 1e-12
        for key in ("all", "train", "val"):
            m = verify_checksum(toy_50k[key])
            assert m == read_manifest(toy_50k[key])
        info.update(checked=report["checked"], max_abs_error=f"{report['max_abs_error']:.1e}")


def test_10_parameter_count():
    with criterion(10, "production parameter count near 65M", 1.0) as info:
        n = param_count(production_config())
        assert abs(n - 65e6) / 65e6 < 0.2
        info["params"] = f"{n:,}"
