"""Server-side graph: similarity, top-k sparsification, normalization, influence solve.

Only columns of ``S = (I - alpha * Wn)^-1`` that belong to labeled points are
ever formed.  Each column is solved on its own so that the value of a column
does not depend on which other columns were requested; a run in which one
client withholds its labels then reproduces the remaining columns bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from xclp import _kernels
from xclp.lsh import estimate_cosine

DENSE_LIMIT = 2000
CG_TOL = 1e-10
RESIDUAL_TOL = 1e-8


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    A: np.ndarray  # dense cosine estimates
    B: sp.csr_matrix  # top-k per row, clamped at 0
    W: sp.csr_matrix  # B + B^T
    normalized: sp.csr_matrix  # D^-1/2 W D^-1/2
    degree: np.ndarray
    k: int

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def isolated(self) -> np.ndarray:
        return np.flatnonzero(self.degree == 0)

    def stats(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "edges": int(sp.triu(self.W, 1).nnz),
            "isolated": int(self.isolated.size),
            "mean_degree": float(self.degree.mean()) if self.n else 0.0,
        }


def graph_from_similarity(A: np.ndarray, k: int) -> SimilarityGraph:
    """Sparsify, symmetrize and normalize a dense similarity matrix."""
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("similarity matrix must be square")
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    cols = _kernels.topk_rows(A, k)
    rows = np.repeat(np.arange(n), k)
    vals = np.maximum(A[rows, cols.ravel()], 0.0)  # negative similarities become non-edges
    B = sp.csr_matrix((vals, (rows, cols.ravel())), shape=(n, n))
    B.eliminate_zeros()
    W = (B + B.T).tocsr()
    W.sort_indices()
    degree = np.asarray(W.sum(axis=1)).ravel()
    scale = np.zeros(n)
    pos = degree > 0
    scale[pos] = 1.0 / np.sqrt(degree[pos])
    D = sp.diags(scale)
    normalized = (D @ W @ D).tocsr()
    normalized.sort_indices()
    A.setflags(write=False)
    return SimilarityGraph(A, B, W, normalized, degree, k)


def build_graph(H, L: int, k: int) -> SimilarityGraph:
    """Graph from a Hamming matrix (a ``HammingMatrix`` uses its present rows)."""
    values = H.restricted() if hasattr(H, "restricted") else np.asarray(H)
    A = estimate_cosine(values, L)
    A = np.atleast_2d(A)
    np.fill_diagonal(A, 1.0)
    return graph_from_similarity(A, k)


@dataclass(frozen=True, eq=False)
class InfluenceColumns:
    blocks: dict[str, np.ndarray]  # client -> n x l_j
    alpha: float
    max_residual: float
    method: str


def _system(graph: SimilarityGraph, alpha: float) -> sp.csr_matrix:
    return (sp.identity(graph.n, format="csr") - alpha * graph.normalized).tocsr()


def influence_columns(
    graph: SimilarityGraph,
    labeled_global_indices: Mapping[str, np.ndarray],
    alpha: float,
    method: str = "auto",
) -> InfluenceColumns:
    """Columns ``S[:, i]`` for every labeled index, grouped per client.

    ``method`` is ``"cholesky"`` (dense), ``"cg"`` or ``"auto"`` (dense up to
    2000 points).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    n = graph.n
    if method == "auto":
        method = "cholesky" if n <= DENSE_LIMIT else "cg"
    M = _system(graph, alpha)
    blocks: dict[str, np.ndarray] = {}
    worst = 0.0
    if method == "cholesky":
        factor = scipy.linalg.cho_factor(M.toarray(), lower=True)
        solve = lambda e: scipy.linalg.cho_solve(factor, e)  # noqa: E731
    elif method == "cg":
        def solve(e):
            x, info = cg(M, e, rtol=CG_TOL, atol=0.0, maxiter=10 * n)
            if info != 0:
                res = np.abs(M @ x - e).max()
                raise SolverError(f"CG did not converge in {10 * n} iterations (residual {res:.3e})")
            return x
    else:
        raise ValueError(f"unknown solver {method!r}")
    for cid, idx in labeled_global_indices.items():
        idx = np.asarray(idx, dtype=np.int64)
        out = np.zeros((n, idx.size))
        for col, i in enumerate(idx):
            e = np.zeros(n)
            e[i] = 1.0
            x = solve(e)
            r = float(np.abs(M @ x - e).max())
            if r > RESIDUAL_TOL:
                raise SolverError(f"influence column {i}: residual {r:.3e} above {RESIDUAL_TOL}")
            worst = max(worst, r)
            out[:, col] = x
        blocks[cid] = out
    return InfluenceColumns(blocks, alpha, worst, method)


def write_edge_list(graph: SimilarityGraph, path: str | Path) -> None:
    """Upper-triangle edges of ``W`` as ``i j weight`` lines."""
    upper = sp.triu(graph.W, 1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    with open(path, "w") as fh:
        for t in order:
            fh.write(f"{upper.row[t]} {upper.col[t]} {float(upper.data[t])!r}\n")


def read_edge_list(path: str | Path, n: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            i, j, w = line.split()
            rows += [int(i), int(j)]
            cols += [int(j), int(i)]
            vals += [float(w), float(w)]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
