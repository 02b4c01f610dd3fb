"""Rooted full binary phylogenetic trees.

Nodes live in one index space: internal nodes ``0 .. M-2`` numbered in
depth-first pre-order (root is 0), followed by the leaves ``M-1 .. 2M-2`` in
left-to-right Newick order. Every per-node vector in the package (activation
bits, branching probabilities, dispersions) uses the internal pre-order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

SIMPLEX_TOL = 1e-8


class NewickError(ValueError):
    """Raised for malformed or unsupported Newick input."""


@dataclass(frozen=True, eq=False)
class PhyloTree:
    leaves: tuple[str, ...]
    left: np.ndarray
    right: np.ndarray
    parent: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for arr in (self.left, self.right, self.parent):
            arr.setflags(write=False)
        self._validate()

    # -- basic structure -------------------------------------------------

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def n_internal(self) -> int:
        return len(self.leaves) - 1

    @property
    def node_count(self) -> int:
        return 2 * len(self.leaves) - 1

    @property
    def root(self) -> int:
        return 0

    def leaf_node(self, j: int) -> int:
        return self.n_internal + j

    def is_leaf(self, node: int) -> bool:
        return node >= self.n_internal

    def sibling(self, node: int) -> int:
        p = int(self.parent[node])
        if p < 0:
            raise ValueError("the root has no sibling")
        return int(self.right[p]) if self.left[p] == node else int(self.left[p])

    def _validate(self):
        m = self.n_leaves
        if m < 2:
            raise NewickError("a tree needs at least 2 leaves")
        if len(set(self.leaves)) != m:
            seen, dup = set(), []
            for name in self.leaves:
                if name in seen:
                    dup.append(name)
                seen.add(name)
            raise NewickError(f"duplicate leaf names: {sorted(set(dup))}")
        if len(self.left) != m - 1 or len(self.right) != m - 1:
            raise NewickError("internal node count must be M-1")
        counts = np.zeros(self.node_count, dtype=int)
        np.add.at(counts, self.left, 1)
        np.add.at(counts, self.right, 1)
        if counts[0] != 0 or np.any(counts[1:] != 1):
            raise NewickError("child arrays do not describe a rooted tree")

    # -- derived indexes (computed lazily, cached) ------------------------

    @property
    def members(self) -> np.ndarray:
        """Boolean (M-1, M) matrix: leaf j lies under internal node a."""
        if "members" not in self._cache:
            m = self.n_leaves
            sets = np.zeros((self.node_count, m), dtype=bool)
            for j in range(m):
                sets[self.leaf_node(j), j] = True
            for a in reversed(range(self.n_internal)):
                sets[a] = sets[self.left[a]] | sets[self.right[a]]
            self._cache["node_sets"] = sets
            self._cache["members"] = sets[: self.n_internal]
        return self._cache["members"]

    @property
    def left_members(self) -> np.ndarray:
        """Boolean (M-1, M) matrix: leaf j lies under the left child of a."""
        if "left_members" not in self._cache:
            self.members
            self._cache["left_members"] = self._cache["node_sets"][self.left]
        return self._cache["left_members"]

    @property
    def path_signs(self) -> np.ndarray:
        """Integer (M, M-1) matrix: +1 if the path to leaf j turns left at a,
        -1 if it turns right, 0 if a is not on the path."""
        if "path_signs" not in self._cache:
            signs = self.left_members.T.astype(np.int8) - (
                self.members & ~self.left_members
            ).T.astype(np.int8)
            self._cache["path_signs"] = signs
        return self._cache["path_signs"]

    def leaf_path(self, j: int) -> list[int]:
        """Node ids from the root down to leaf j (inclusive of both)."""
        node = self.leaf_node(j)
        path = [node]
        while self.parent[node] >= 0:
            node = int(self.parent[node])
            path.append(node)
        return path[::-1]

    @property
    def leaf_paths(self) -> list[list[int]]:
        return [self.leaf_path(j) for j in range(self.n_leaves)]

    def depth(self, node: int) -> int:
        d = 0
        while self.parent[node] >= 0:
            node = int(self.parent[node])
            d += 1
        return d

    def lca(self, j1: int, j2: int) -> int:
        p1, p2 = self.leaf_path(j1), self.leaf_path(j2)
        k = 0
        while k < min(len(p1), len(p2)) and p1[k] == p2[k]:
            k += 1
        return p1[k - 1]

    # -- export ----------------------------------------------------------

    def to_newick(self) -> str:
        def rec(node):
            if self.is_leaf(node):
                return _quote(self.leaves[node - self.n_internal])
            return f"({rec(self.left[node])},{rec(self.right[node])})"

        return rec(0) + ";"

    def digest(self) -> str:
        return hashlib.sha256(self.to_newick().encode()).hexdigest()[:16]

    def node_table(self) -> str:
        """Two-column text listing: internal node index and its leaf set."""
        lines = ["node\tleaves"]
        for a in range(self.n_internal):
            names = [self.leaves[j] for j in np.flatnonzero(self.members[a])]
            lines.append(f"{a}\t{','.join(names)}")
        return "\n".join(lines) + "\n"


def _quote(name: str) -> str:
    if any(ch in name for ch in "(),:;[]' \t"):
        return "'" + name.replace("'", "''") + "'"
    return name


# ---------------------------------------------------------------------------
# Newick parsing
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.s = text
        self.i = 0

    def error(self, msg):
        raise NewickError(f"{msg} at position {self.i}")

    def skip(self):
        s = self.s
        while self.i < len(s):
            ch = s[self.i]
            if ch.isspace():
                self.i += 1
            elif ch == "[":
                end = s.find("]", self.i)
                if end < 0:
                    self.error("unterminated comment")
                self.i = end + 1
            else:
                break

    def peek(self):
        self.skip()
        return self.s[self.i] if self.i < len(self.s) else ""

    def label(self) -> str:
        self.skip()
        s = self.s
        if self.i < len(s) and s[self.i] == "'":
            out = []
            self.i += 1
            while True:
                if self.i >= len(s):
                    self.error("unterminated quoted label")
                ch = s[self.i]
                if ch == "'":
                    if self.i + 1 < len(s) and s[self.i + 1] == "'":
                        out.append("'")
                        self.i += 2
                        continue
                    self.i += 1
                    break
                out.append(ch)
                self.i += 1
            return "".join(out)
        start = self.i
        while self.i < len(s) and s[self.i] not in "(),:;[" and not s[self.i].isspace():
            self.i += 1
        return s[start : self.i]

    def branch_length(self):
        if self.peek() == ":":
            self.i += 1
            self.skip()
            start = self.i
            while self.i < len(self.s) and self.s[self.i] not in "(),;[" and not self.s[self.i].isspace():
                self.i += 1
            token = self.s[start : self.i]
            try:
                float(token)
            except ValueError:
                self.i = start
                self.error(f"bad branch length {token!r}")

    def subtree(self):
        if self.peek() == "(":
            pos = self.i
            self.i += 1
            children = [self.subtree()]
            while self.peek() == ",":
                self.i += 1
                children.append(self.subtree())
            if self.peek() != ")":
                self.error("expected ',' or ')'")
            self.i += 1
            self.label()  # internal labels are ignored
            self.branch_length()
            return ("node", children, pos)
        name = self.label()
        if not name:
            self.error("expected a leaf name or '('")
        self.branch_length()
        return ("leaf", name)

    def parse(self):
        tree = self.subtree()
        if self.peek() != ";":
            self.error("expected ';'")
        self.i += 1
        if self.peek() != "":
            self.error("trailing characters after ';'")
        return tree


def _binarize(node, resolve: bool):
    if node[0] == "leaf":
        return node
    _, children, pos = node
    children = [_binarize(c, resolve) for c in children]
    if len(children) == 1:
        return children[0] if resolve else _fail_arity(children, pos)
    if len(children) > 2:
        if not resolve:
            _fail_arity(children, pos)
        acc = children[0]
        for c in children[1:]:
            acc = ("node", [acc, c], pos)
        return acc
    return ("node", children, pos)


def _leaf_names(node):
    if node[0] == "leaf":
        return [node[1]]
    return [n for c in node[1] for n in _leaf_names(c)]


def _fail_arity(children, pos):
    names = [n for c in children for n in _leaf_names(c)]
    raise NewickError(
        f"node at position {pos} has {len(children)} children "
        f"(leaves {names}); the model needs a full binary tree"
    )


def parse_newick(text: str, resolve: bool = False) -> PhyloTree:
    """Parse a Newick string into a validated :class:`PhyloTree`.

    Branch lengths and internal labels are accepted and ignored. Nodes with
    other than two children raise :class:`NewickError` unless ``resolve`` is
    set, in which case multifurcations are binarized left-deep
    (``(A,B,C)`` becomes ``((A,B),C)``) and unary nodes are collapsed.
    """
    raw = _Parser(text.strip()).parse()
    if raw[0] == "leaf":
        raise NewickError("a tree needs at least 2 leaves")
    root = _binarize(raw, resolve)

    leaves: list[str] = []
    internal_order = []

    def assign(node):
        if node[0] == "leaf":
            leaves.append(node[1])
            return
        internal_order.append(node)
        for c in node[1]:
            assign(c)

    assign(root)
    n_int = len(internal_order)
    if n_int != len(leaves) - 1:
        raise NewickError("tree is not full binary")
    ids = {id(node): k for k, node in enumerate(internal_order)}
    leaf_counter = iter(range(len(leaves)))

    def resolve_id(node):
        if node[0] == "leaf":
            return n_int + next(leaf_counter)
        return ids[id(node)]

    # walk in the same pre-order so leaf ids come out left to right
    left = [0] * n_int
    right = [0] * n_int

    def wire(node):
        k = ids[id(node)]
        a, b = node[1]
        la = resolve_id(a)
        if a[0] == "node":
            wire(a)
        lb = resolve_id(b)
        if b[0] == "node":
            wire(b)
        left[k], right[k] = la, lb

    wire(root)
    parent = np.full(2 * len(leaves) - 1, -1, dtype=np.int64)
    for k in range(n_int):
        parent[left[k]] = k
        parent[right[k]] = k
    return PhyloTree(
        leaves=tuple(leaves),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        parent=parent,
    )


def read_newick(path, resolve: bool = False) -> PhyloTree:
    with open(path, encoding="utf-8") as fh:
        return parse_newick(fh.read(), resolve=resolve)


# ---------------------------------------------------------------------------
# counts and the tree-based ratio transform
# ---------------------------------------------------------------------------


def aggregate_counts(tree: PhyloTree, sample) -> np.ndarray:
    """Count mass under every node, indexed like the tree's node ids.

    Accepts a single length-M vector or an (n, M) matrix; returns a
    ``(2M-1,)`` or ``(n, 2M-1)`` integer array.
    """
    y = np.asarray(sample)
    if y.shape[-1] != tree.n_leaves:
        raise ValueError(
            f"sample has {y.shape[-1]} entries but the tree has {tree.n_leaves} leaves"
        )
    if np.any(y < 0):
        raise ValueError("counts must be nonnegative")
    y = y.astype(np.int64)
    internal = y @ tree.members.T.astype(np.int64)
    return np.concatenate([internal, y], axis=-1)


def node_stats(tree: PhyloTree, counts) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample binomial statistics ``(y(A_l), y(A))`` at internal nodes.

    Returns two ``(n, M-1)`` integer arrays.
    """
    y = np.atleast_2d(np.asarray(counts)).astype(np.int64)
    if y.shape[1] != tree.n_leaves:
        raise ValueError("count matrix columns do not match tree leaves")
    return y @ tree.left_members.T.astype(np.int64), y @ tree.members.T.astype(np.int64)


def _check_simplex(p, tol=SIMPLEX_TOL):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("probabilities must be nonnegative")
    total = p.sum(axis=-1, keepdims=True)
    if np.any(np.abs(total - 1.0) > tol):
        raise ValueError(f"probability vector sums to {np.ravel(total)}, not 1")
    return p / total


def tree_ratio_transform(tree: PhyloTree, p) -> np.ndarray:
    """Left-branch probability at every internal node (pre-order vector).

    Subtrees with zero mass get 1/2.
    """
    p = _check_simplex(p)
    if p.shape[-1] != tree.n_leaves:
        raise ValueError("p does not match the number of leaves")
    num = p @ tree.left_members.T
    den = p @ tree.members.T
    safe = np.where(den > 0, den, 1.0)
    theta = np.where(den > 0, num / safe, 0.5)
    return np.clip(theta, 0.0, 1.0)


def inverse_tree_ratio_transform(tree: PhyloTree, theta) -> np.ndarray:
    """Leaf probabilities as path products of branching probabilities."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != tree.n_internal:
        raise ValueError("theta must have one entry per internal node")
    if np.any((theta < 0) | (theta > 1)):
        raise ValueError("branching probabilities must lie in [0, 1]")
    signs = tree.path_signs
    lead = theta.shape[:-1]
    p = np.ones(lead + (tree.n_leaves,))
    for a in range(tree.n_internal):
        t = theta[..., a : a + 1]
        col = signs[:, a]
        p = p * np.where(col == 1, t, np.where(col == -1, 1.0 - t, 1.0))
    return p
