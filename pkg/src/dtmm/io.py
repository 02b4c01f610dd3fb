"""Reading and writing OTU tables, label files, chains and summaries."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sampler import PosteriorChain
from .tree import PhyloTree

CHAIN_FORMAT = "dtmm-chain"
CHAIN_VERSION = 1
DIGITS = 12


def fmt(x) -> str:
    return f"{x:.{DIGITS}g}"


def rounded(obj):
    """Round every float in a JSON-able structure to 12 significant digits."""
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {k: rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return rounded(obj.tolist())
    if isinstance(obj, np.floating):
        return float(fmt(float(obj)))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


@dataclass
class OtuTable:
    sample_ids: list
    otu_ids: list
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n, m = self.counts.shape
        if len(self.sample_ids) != n or len(self.otu_ids) != m:
            raise ValueError("ids do not match the count matrix")
        for kind, ids in (("sample", self.sample_ids), ("OTU", self.otu_ids)):
            seen = set()
            for i in ids:
                if i in seen:
                    raise ValueError(f"duplicate {kind} id {i!r}")
                seen.add(i)
        if m < 2:
            raise ValueError("an OTU table needs at least two OTUs")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def align(self, tree: PhyloTree) -> "OtuTable":
        """Reorder OTU columns to the tree's leaf order, matching by id."""
        have, want = set(self.otu_ids), set(tree.leaves)
        if have != want:
            parts = []
            if have - want:
                parts.append("OTUs missing from the tree: " + ", ".join(sorted(have - want)))
            if want - have:
                parts.append("leaves missing from the table: " + ", ".join(sorted(want - have)))
            raise ValueError("; ".join(parts))
        col = {o: j for j, o in enumerate(self.otu_ids)}
        order = [col[leaf] for leaf in tree.leaves]
        return OtuTable(list(self.sample_ids), list(tree.leaves), self.counts[:, order])

    def filter_rows(self, min_total: int = 0) -> "OtuTable":
        """Drop samples whose total is below ``min_total`` or zero."""
        keep = (self.totals >= min_total) & (self.totals > 0)
        return OtuTable([s for s, k in zip(self.sample_ids, keep) if k], list(self.otu_ids),
                        self.counts[keep])

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update("\t".join(self.sample_ids).encode())
        h.update(b"\n")
        h.update("\t".join(self.otu_ids).encode())
        h.update(np.ascontiguousarray(self.counts, dtype="<i8").tobytes())
        return h.hexdigest()[:16]


def _delimiter(path, first_line: str) -> str:
    if str(path).lower().endswith(".csv"):
        return ","
    if str(path).lower().endswith((".tsv", ".txt")):
        return "\t"
    return "\t" if "\t" in first_line else ","


def read_otu_table(path) -> OtuTable:
    """Samples as rows, OTUs as columns; header row of OTU ids, first column
    of sample ids. Tab- or comma-separated by extension."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    rows = list(csv.reader(lines, delimiter=_delimiter(path, lines[0])))
    header = rows[0]
    if len(header) < 3:
        raise ValueError(f"{path}: line 1: expected a sample-id column and at least two OTUs")
    otus = [h.strip() for h in header[1:]]
    samples, counts = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ValueError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        vals = []
        for cell in row[1:]:
            cell = cell.strip()
            try:
                v = float(cell)
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: {cell!r} is not a number") from None
            if v < 0 or v != int(v):
                raise ValueError(f"{path}: line {lineno}: {cell!r} is not a nonnegative integer count")
            vals.append(int(v))
        samples.append(row[0].strip())
        counts.append(vals)
    if not samples:
        raise ValueError(f"{path}: no samples")
    return OtuTable(samples, otus, np.array(counts, dtype=np.int64))


def write_otu_table(table: OtuTable, path) -> None:
    delim = "," if str(path).lower().endswith(".csv") else "\t"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delim, lineterminator="\n")
        w.writerow(["sample_id"] + list(table.otu_ids))
        for sid, row in zip(table.sample_ids, table.counts):
            w.writerow([sid] + [int(v) for v in row])


def write_labels(path, sample_ids, labels) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label"])
        for sid, lab in zip(sample_ids, labels):
            w.writerow([sid, lab])


def read_labels(path):
    """Two-column CSV (sample_id, label). Returns ``(ids, labels)``; labels
    are kept as strings unless every one is an integer."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip().lower() for c in rows[0][:2]] != ["sample_id", "label"]:
        raise ValueError(f"{path}: line 1: expected header 'sample_id,label'")
    ids, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ValueError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
        ids.append(row[0].strip())
        labels.append(row[1].strip())
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate sample ids")
    try:
        return ids, np.array([int(v) for v in labels])
    except ValueError:
        return ids, np.array(labels)


def match_labels(sample_ids, ids, labels) -> np.ndarray:
    """Reorder ``labels`` (keyed by ``ids``) to ``sample_ids``."""
    lookup = dict(zip(ids, labels))
    missing = [s for s in sample_ids if s not in lookup]
    if missing:
        raise ValueError("no label for samples: " + ", ".join(missing[:10]))
    return np.array([lookup[s] for s in sample_ids])


def write_matrix(path, ids, mat) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id"] + list(ids))
        for sid, row in zip(ids, mat):
            w.writerow([sid] + [fmt(v) for v in row])


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rounded(obj), fh, indent=1)
        fh.write("\n")


# -- chains -----------------------------------------------------------------

def chain_header(tree: PhyloTree, table: OtuTable, config: dict, n_chains: int = 1) -> dict:
    from . import __version__

    return {
        "format": CHAIN_FORMAT,
        "version": CHAIN_VERSION,
        "package_version": __version__,
        "tree": tree.digest(),
        "newick": tree.to_newick(),
        "data": table.digest(),
        "samples": list(table.sample_ids),
        "config": config,
        "chains": n_chains,
    }


def write_chain(path, header: dict, chains) -> None:
    """JSON lines: one header record, then one record per retained draw."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(rounded(header)) + "\n")
        for ci, ch in enumerate(chains):
            for r in range(len(ch)):
                rec = {
                    "chain": ci,
                    "t": int(ch.t[r]),
                    "c": ch.c[r].tolist(),
                    "gamma": ch.gamma[r].tolist(),
                    "beta": float(fmt(ch.beta[r])),
                    "lambda": rounded(np.asarray(ch.lam[r]).tolist()),
                }
                fh.write(json.dumps(rec) + "\n")


def read_chain(path):
    """Returns ``(header, [PosteriorChain per chain])``."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty chain file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: line 1: {exc}") from None
    if header.get("format") != CHAIN_FORMAT:
        raise ValueError(f"{path}: not a chain file")
    if header.get("version") != CHAIN_VERSION:
        raise ValueError(f"{path}: unsupported chain version {header.get('version')}")
    by_chain: dict[int, dict] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
        d = by_chain.setdefault(int(rec.get("chain", 0)),
                                {"t": [], "c": [], "gamma": [], "beta": [], "lam": []})
        d["t"].append(rec["t"])
        d["c"].append(rec["c"])
        d["gamma"].append(rec["gamma"])
        d["beta"].append(rec["beta"])
        d["lam"].append(rec["lambda"])
    chains = [PosteriorChain(**by_chain[k]) for k in sorted(by_chain)]
    return header, chains
