"""CSV exports for external plotting: token embeddings, attention maps and
intra-stack field magnitude.  Dimensionality reduction is left to other tools."""

from __future__ import annotations

import csv
from pathlib import Path

from .checkpoint import Checkpoint, load_checkpoint
from .errors import BadIndex, ManifestMismatch
from .materials import MaterialDb
from .serialization import Vocabulary, manifest_bytes, tokenize, vocab_label
from .surrogate import forward
from .tmm import AmbientConfig, FieldMap, Structure, WavelengthGrid, field_distribution


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _open_csv(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="")


def _checkpoint(checkpoint) -> Checkpoint:
    return checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)


def export_embeddings(checkpoint, out_csv, vocab: Vocabulary | None = None) -> int:
    """One row per token id: ``token_id, label, thickness_nm, e0 .. e{H-1}``.

    Values are written with 17 significant digits so they reload bit-exactly.
    """
    ck = _checkpoint(checkpoint)
    if vocab is not None and manifest_bytes(vocab.manifest()) != manifest_bytes(ck.vocab_manifest):
        raise ManifestMismatch("vocabulary does not match the checkpoint")
    vocab = ck.vocab
    table = ck.params["token_embedding"].detach().cpu().double().numpy()
    with _open_csv(out_csv) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["token_id", "material_or_special", "thickness_nm"] + [f"e{i}" for i in range(table.shape[1])])
        for token in range(vocab.total_size):
            label, thickness = vocab_label(vocab, token)
            w.writerow([token, label, "" if thickness is None else _fmt(thickness)] + [_fmt(x) for x in table[token]])
    return vocab.total_size


def token_labels(vocab: Vocabulary, ids) -> list[str]:
    out = []
    for token in ids:
        label, thickness = vocab_label(vocab, token)
        out.append(label if thickness is None else f"{label}@{thickness:g}nm")
    return out


def attention_map(checkpoint, structure: Structure, block: int, head: int):
    """``(labels, weights)`` for one head on a single unpadded sequence."""
    ck = _checkpoint(checkpoint)
    cfg = ck.config
    if not 0 <= block < cfg.num_blocks:
        raise BadIndex(f"block {block} outside [0, {cfg.num_blocks})")
    if not 0 <= head < cfg.num_heads:
        raise BadIndex(f"head {head} outside [0, {cfg.num_heads})")
    vocab = ck.vocab
    ids = tokenize(vocab, structure)
    _, records = forward(ck.params, cfg, [ids], capture_attention=True)
    rec = next(r for r in records if r.block == block and r.head == head)
    return token_labels(vocab, ids), rec.weights[: len(ids), : len(ids)]


def export_attention(checkpoint, structure: Structure, block: int, head: int, out_csv):
    """Write the query-by-key attention matrix with token labels on both axes."""
    labels, weights = attention_map(checkpoint, structure, block, head)
    with _open_csv(out_csv) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query\\key"] + labels)
        for label, row in zip(labels, weights):
            w.writerow([label] + [_fmt(x) for x in row])
    return weights


def export_field(
    db: MaterialDb,
    structure: Structure,
    out_csv,
    grid: WavelengthGrid | None = None,
    amb: AmbientConfig | None = None,
    z_step_nm: float = 1.0,
) -> FieldMap:
    """``|E|`` grid: header row of depths (nm), then one row per wavelength."""
    fmap = field_distribution(db, structure, grid, amb, z_step_nm)
    with _open_csv(out_csv) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavelength_nm\\z_nm"] + [_fmt(z) for z in fmap.z_nm])
        for lam, row in zip(fmap.wavelengths_nm, fmap.magnitude):
            w.writerow([_fmt(lam)] + [_fmt(x) for x in row])
    return fmap


def read_matrix_csv(path):
    """Inverse of the exports above: ``(column labels, row labels, values)``."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0][1:]
    return cols, [r[0] for r in rows[1:]], [[float(x) for x in r[1:]] for r in rows[1:]]
