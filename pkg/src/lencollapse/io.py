"""Readers for embedding exports and retrieval runs, and the CSV writer."""

import csv
import json
import math
from collections import defaultdict

import numpy as np

from .metrics import EmbeddingRecord, RankingRun, RecordError

__all__ = [
    "InputError",
    "format_value",
    "read_doc_lengths",
    "read_embeddings",
    "read_qrels",
    "read_ranking_run",
    "read_run",
    "write_csv",
]


class InputError(ValueError):
    """Unparseable or inconsistent input; carries the file path and line number."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def read_embeddings(path):
    """One JSON object per line: ``{"id": str, "length": int, "vector": [float, ...]}``.

    The first record fixes the dimension; a mismatch aborts naming the record.
    """
    records = []
    dim = None
    for lineno, line in _lines(path):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(path, lineno, f"malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict) or not {"id", "length", "vector"} <= obj.keys():
            raise InputError(path, lineno, "expected an object with id, length, vector")
        try:
            rec = EmbeddingRecord(str(obj["id"]), obj["length"], obj["vector"])
        except (RecordError, TypeError, ValueError) as exc:
            raise InputError(path, lineno, str(exc)) from None
        if dim is None:
            dim = rec.vector.size
        elif rec.vector.size != dim:
            raise InputError(
                path, lineno,
                f"record {rec.id!r} has dimension {rec.vector.size}, expected {dim}",
            )
        records.append(rec)
    return records


def read_run(path):
    """Whitespace run lines ``qid Q0 docid rank score tag``, grouped and sorted by rank."""
    by_query = defaultdict(list)
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 6:
            raise InputError(path, lineno, f"expected 6 fields, got {len(parts)}")
        qid, _, doc, rank, score, _ = parts
        try:
            rank, score = int(rank), float(score)
        except ValueError:
            raise InputError(path, lineno, "rank must be an integer and score a number") from None
        if rank < 1:
            raise InputError(path, lineno, f"ranks are 1-based, got {rank}")
        by_query[qid].append((rank, doc, score, lineno))
    ranked = {}
    for qid, entries in by_query.items():
        entries.sort()
        for (r0, *_), (r1, _, _, lineno) in zip(entries, entries[1:]):
            if r1 == r0:
                raise InputError(path, lineno, f"duplicate rank {r1} for query {qid!r}")
        ranked[qid] = [(doc, score) for _, doc, score, _ in entries]
    return ranked


def read_qrels(path):
    """Lines ``qid 0 docid rel``; ``rel > 0`` marks a relevant document."""
    qrels = defaultdict(set)
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise InputError(path, lineno, f"expected 4 fields, got {len(parts)}")
        try:
            rel = int(parts[3])
        except ValueError:
            raise InputError(path, lineno, "relevance must be an integer") from None
        if rel > 0:
            qrels[parts[0]].add(parts[2])
    return dict(qrels)


def read_doc_lengths(path):
    lengths = {}
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise InputError(path, lineno, f"expected 'docid length', got {len(parts)} fields")
        try:
            lengths[parts[0]] = int(parts[1])
        except ValueError:
            raise InputError(path, lineno, "length must be an integer") from None
    return lengths


def read_ranking_run(run_path, qrels_path, lengths_path):
    ranked = read_run(run_path)
    try:
        return RankingRun(ranked, read_qrels(qrels_path), read_doc_lengths(lengths_path))
    except ValueError as exc:
        raise InputError(run_path, 0, str(exc)) from None


def format_value(v):
    """17 significant digits for floats so that CSVs round-trip exactly."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row[c]) for c in columns])
    return path
