"""On-disk formats: grammar JSON, dataset text/binary files, CSV helpers.

Dataset files carry a header (seq_len, vocab_size, n_rows, grammar hash) and
the token rows; the binary layout opens with the magic bytes ``RHMD1``. Floats
in CSV output are rendered with 17 significant digits so values round-trip.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .grammar import Dataset, RuleSet

DATASET_MAGIC = b"RHMD1"


def save_grammar(rs: RuleSet, path) -> None:
    doc = rs.to_jsonable()
    doc["hash"] = rs.content_hash()
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_grammar(path) -> RuleSet:
    doc = json.loads(Path(path).read_text())
    rs = RuleSet.from_jsonable(doc)
    if "hash" in doc and doc["hash"] != rs.content_hash():
        raise ValueError(f"grammar file {path} failed its content hash")
    return rs


def save_dataset(ds: Dataset, path, binary: bool = False) -> None:
    """Write rows (and the provenance header); latents are not stored — they
    are recoverable by parsing under the grammar."""
    path = Path(path)
    grammar_hash = ds.meta.get("grammar_hash", "-")
    d = ds.sequences.shape[1]
    vocab = ds.params.vocab_size if ds.params is not None else int(ds.sequences.max()) + 1
    if binary:
        with open(path, "wb") as fh:
            fh.write(DATASET_MAGIC)
            header = np.array([d, vocab, ds.n_rows], dtype="<u8")
            fh.write(header.tobytes())
            tag = grammar_hash.encode()
            fh.write(len(tag).to_bytes(2, "little"))
            fh.write(tag)
            fh.write(ds.sequences.astype("<u2").tobytes())
        return
    with open(path, "w") as fh:
        fh.write(f"{d} {vocab} {ds.n_rows} {grammar_hash}\n")
        np.savetxt(fh, ds.sequences, fmt="%d")


def load_dataset(path) -> tuple[np.ndarray, dict]:
    """Returns (rows, header dict with seq_len/vocab_size/n_rows/grammar_hash)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(DATASET_MAGIC))
        if magic == DATASET_MAGIC:
            d, vocab, n = (int(x) for x in np.frombuffer(fh.read(24), dtype="<u8"))
            tag_len = int.from_bytes(fh.read(2), "little")
            grammar_hash = fh.read(tag_len).decode()
            seqs = np.frombuffer(fh.read(d * n * 2), dtype="<u2")
            seqs = seqs.reshape(n, d).astype(np.int32)
            header = dict(seq_len=d, vocab_size=vocab, n_rows=n, grammar_hash=grammar_hash)
            return seqs, header
    lines = path.read_text().splitlines()
    d, vocab, n, grammar_hash = lines[0].split()
    seqs = np.array(
        [[int(t) for t in line.split()] for line in lines[1 : int(n) + 1]],
        dtype=np.int32,
    ).reshape(int(n), int(d))
    header = dict(
        seq_len=int(d), vocab_size=int(vocab), n_rows=int(n), grammar_hash=grammar_hash
    )
    return seqs, header


def format_float(x: float) -> str:
    return f"{x:.17g}"


def write_csv(path, columns: list[str], rows: list[tuple]) -> None:
    """Plain deterministic CSV: header row, 17-significant-digit floats."""
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = [
                format_float(c) if isinstance(c, float) else str(c) for c in row
            ]
            fh.write(",".join(cells) + "\n")
