"""``layerformer`` command line.  Exit codes: 0 ok, 1 usage error, 2 runtime error."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import analysis, datagen, evalbench, trainer
from .checkpoint import load_checkpoint
from .errors import ConfigError, LayerformerError
from .materials import load_material_db, toy_material_db
from .serialization import Vocabulary, toy_vocabulary, uniform_bins
from .surrogate import production_config, tiny_config
from .tmm import AmbientConfig, Structure, WavelengthGrid, simulate

log = logging.getLogger("layerformer")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, materials=True, grid=True):
    if materials:
        p.add_argument("--materials", default="toy", help="directory of <name>.csv dispersion files, or 'toy'")
    if grid:
        p.add_argument("--grid", default="400:1100:10", help="start:stop:step in nm")
        p.add_argument("--ambient-in", type=float, default=1.0, help="incident medium index")
        p.add_argument("--ambient-out", type=float, default=1.45, help="exit medium index")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path, help="JSON file with option overrides")
    p.add_argument("--out", type=Path)


def build_parser() -> _Parser:
    parser = _Parser(prog="layerformer", description="Thin-film solver and transformer surrogate toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="spectrum of one structure")
    _common(p)
    p.add_argument("--structure", type=Path, required=True)

    p = sub.add_parser("gen-data", help="sample and label a dataset")
    _common(p)
    p.add_argument("--count", type=int, default=datagen.DEFAULT_TRAIN_COUNT + datagen.DEFAULT_VAL_COUNT)
    p.add_argument("--preset", choices=["toy", "production"], default="production")
    p.add_argument("--max-layers", type=int)
    p.add_argument("--bins", help="start:stop:step thickness bins in nm")
    p.add_argument("--val-fraction", type=float, default=0.0,
                   help="if > 0 also write <out>.train.jsonl and <out>.val.jsonl")
    p.add_argument("--dedup", action="store_true")

    p = sub.add_parser("train", help="train the surrogate")
    _common(p, materials=False, grid=False)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--val", type=Path, required=True)
    p.add_argument("--preset", choices=["tiny", "production"], default="tiny")
    p.add_argument("--dtype", choices=["float32", "float64"])
    for f in fields(trainer.TrainConfig):
        if f.name in ("seed", "checkpoint_dir", "betas"):
            continue
        p.add_argument("--" + f.name.replace("_", "-"), type=float if "rate" in f.name or "ratio" in f.name
                       or f.name in ("eps", "grad_clip_norm") else int)

    p = sub.add_parser("eval", help="global MSE of a checkpoint on a dataset")
    _common(p, materials=False, grid=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)

    p = sub.add_parser("eval-families", help="MSE per fixed-material structure family")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--families", type=Path, help="JSON family list (default: the six benchmark families)")
    p.add_argument("--count", type=int)

    p = sub.add_parser("bench", help="single vs batched timing against the solver")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--n-single", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--data", type=Path, help="dataset for the MSE line of the report")

    p = sub.add_parser("export-embeddings", help="token embedding table as CSV")
    _common(p, materials=False, grid=False)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("export-attention", help="one attention map as CSV")
    _common(p, materials=False, grid=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--structure", type=Path, required=True)
    p.add_argument("--block", type=int, default=0)
    p.add_argument("--head", type=int, default=0)

    p = sub.add_parser("export-field", help="|E(z, wavelength)| grid as CSV")
    _common(p)
    p.add_argument("--structure", type=Path, required=True)
    p.add_argument("--z-step", type=float, default=1.0)

    p = sub.add_parser("validate-data", help="checksum and label audit of a dataset")
    _common(p, grid=False)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--fraction", type=float, default=0.01)
    p.add_argument("--tol", type=float, default=1e-12)
    return parser


def _overrides(args) -> dict:
    return json.loads(args.config.read_text(encoding="utf-8")) if args.config else {}


def _db(args):
    return toy_material_db() if args.materials == "toy" else load_material_db(args.materials)


def _grid_amb(args):
    return WavelengthGrid.parse(args.grid), AmbientConfig(args.ambient_in, args.ambient_out)


def _need_out(args):
    if args.out is None:
        raise UsageError(f"{args.command}: --out is required")
    return args.out


def _structure(path: Path, names) -> Structure:
    spec = json.loads(path.read_text(encoding="utf-8"))
    index = {n: i for i, n in enumerate(names)}
    try:
        layers = tuple((index[l["material"]], float(l["thickness_nm"])) for l in spec["layers"])
    except KeyError as exc:
        raise ConfigError(f"{path}: unknown material or missing field {exc}") from None
    return Structure(layers)


def cmd_simulate(args):
    db = _db(args)
    grid, amb = _grid_amb(args)
    sp = simulate(db, _structure(args.structure, db.names), grid, amb)
    out = _need_out(args)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("wavelength_nm,R,T\n")
        for lam, r, t in zip(grid.wavelengths, sp.R, sp.T):
            fh.write(f"{lam:.17g},{r:.17g},{t:.17g}\n")


def cmd_gen_data(args):
    db = _db(args)
    grid, amb = _grid_amb(args)
    conf = _overrides(args)
    base = toy_vocabulary(db.names) if args.preset == "toy" else Vocabulary(tuple(db.names))
    bins = uniform_bins(*(float(x) for x in args.bins.split(":"))) if args.bins else base.thickness_bins
    max_layers = args.max_layers or conf.get("max_layers") or base.max_layers
    vocab = Vocabulary(tuple(db.names), bins, max_layers)
    sampler = datagen.SamplerConfig(
        max_layers=max_layers,
        layer_count_weights=conf.get("layer_count_weights"),
        seed=args.seed,
        count=args.count,
        dedup=args.dedup,
    )
    out = _need_out(args)
    manifest = datagen.generate_dataset(db, vocab, sampler, out, grid, amb)
    print(f"{manifest['record_count']} records -> {out} sha256={manifest['sha256']}")
    if args.val_fraction > 0:
        stem = out.with_suffix("")
        tr, va = datagen.split_dataset(out, args.val_fraction, f"{stem}.train.jsonl", f"{stem}.val.jsonl")
        print(f"split: {tr['record_count']} train, {va['record_count']} val")


def cmd_train(args):
    conf = _overrides(args)
    train_data = datagen.load_arrays(args.data)
    vocab = Vocabulary.from_manifest(train_data.manifest["vocab_manifest"])
    out_dim = 2 * datagen.grid_from_dict(train_data.manifest["grid"]).count
    if args.preset == "tiny":
        cfg = tiny_config(vocab.total_size, out_dim, vocab.max_seq_len, seed=args.seed)
    else:
        cfg = production_config(vocab.total_size, out_dim, seed=args.seed).replace(max_seq_len=vocab.max_seq_len)
    cfg = cfg.replace(**conf.get("model", {}))
    if args.dtype:
        cfg = cfg.replace(dtype=args.dtype)
    tconf = dict(conf.get("train", {}))
    for f in fields(trainer.TrainConfig):
        value = getattr(args, f.name, None)
        if value is not None and f.name not in ("seed", "checkpoint_dir"):
            tconf[f.name] = value
    if "betas" in tconf:
        tconf["betas"] = tuple(tconf["betas"])
    tcfg = trainer.TrainConfig(**{**tconf, "seed": args.seed, "checkpoint_dir": str(_need_out(args))})
    result = trainer.train(train_data, args.val, cfg, tcfg)
    print(f"final val mse {result.last('val'):.6g}; checkpoints in {tcfg.checkpoint_dir}")


def cmd_eval(args):
    mse = evalbench.eval_mse(args.checkpoint, args.data)
    print(repr(mse))
    if args.out:
        args.out.write_text(json.dumps({"mse": mse, "definition": evalbench.MSE_DEFINITION}) + "\n")


def cmd_eval_families(args):
    db = _db(args)
    grid, amb = _grid_amb(args)
    fams = evalbench.load_families(args.families) if args.families else list(evalbench.BENCHMARK_FAMILIES)
    results = evalbench.eval_families(args.checkpoint, fams, db, args.count, args.seed, grid, amb)
    table = evalbench.format_family_table(results)
    print(table)
    if args.out:
        args.out.write_text(json.dumps([r.__dict__ for r in results], indent=2) + "\n")


def cmd_bench(args):
    db = _db(args)
    grid, amb = _grid_amb(args)
    ck = load_checkpoint(args.checkpoint)
    mse = evalbench.eval_mse(ck, args.data) if args.data else None
    report = evalbench.bench(ck, db, args.n_single, args.batch_size, args.repetitions, args.seed, grid, amb, mse)
    print(report.table())
    if args.out:
        args.out.write_text(report.to_json() + "\n")


def cmd_export_embeddings(args):
    n = analysis.export_embeddings(args.checkpoint, _need_out(args))
    print(f"{n} rows -> {args.out}")


def cmd_export_attention(args):
    ck = load_checkpoint(args.checkpoint)
    s = _structure(args.structure, ck.vocab.material_names)
    analysis.export_attention(ck, s, args.block, args.head, _need_out(args))


def cmd_export_field(args):
    db = _db(args)
    grid, amb = _grid_amb(args)
    analysis.export_field(db, _structure(args.structure, db.names), _need_out(args), grid, amb, args.z_step)


def cmd_validate_data(args):
    report = datagen.validate_dataset(args.data, _db(args), args.fraction, args.seed, args.tol)
    print(json.dumps(report, indent=2))
    return 0 if report["ok"] else 2


COMMANDS = {
    "simulate": cmd_simulate,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "eval-families": cmd_eval_families,
    "bench": cmd_bench,
    "export-embeddings": cmd_export_embeddings,
    "export-attention": cmd_export_attention,
    "export-field": cmd_export_field,
    "validate-data": cmd_validate_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("layerformer: a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args) or 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (LayerformerError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
