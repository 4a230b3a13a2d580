"""Client datasets, cohorts and label assignments.

Within a client, labeled rows are stored first.  The permutation applied at
construction time is kept in ``ClientDataset.order`` so that predictions can
be reported in the caller's original row order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from xclp._rng import generator

ABSTAIN = -1
MATRIX_MAGIC = b"XCLPMAT1"


class CohortError(ValueError):
    """Raised for malformed client data."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ClientDataset:
    client_id: str
    features: np.ndarray
    labels: np.ndarray
    labeled_count: int
    order: np.ndarray | None = None
    # ground truth for every row (-1 if unknown); used for reporting only
    true_labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        feats = np.array(self.features, dtype=np.float64, copy=True)
        if feats.ndim != 2:
            raise CohortError(f"client {self.client_id}: features must be 2-d")
        labels = np.array(self.labels, dtype=np.int8, copy=True)
        n = feats.shape[0]
        if labels.ndim != 2 or labels.shape[0] != n:
            raise CohortError(f"client {self.client_id}: label matrix shape {labels.shape} != ({n}, C)")
        if not np.all(np.isfinite(feats)):
            raise CohortError(f"client {self.client_id}: non-finite feature entry")
        zero_rows = np.flatnonzero(~feats.any(axis=1))
        if zero_rows.size:
            raise CohortError(f"client {self.client_id}: zero feature row {int(zero_rows[0])}")
        lc = int(self.labeled_count)
        if not 0 <= lc <= n:
            raise CohortError(f"client {self.client_id}: labeled_count {lc} outside [0, {n}]")
        if np.any((labels != 0) & (labels != 1)):
            raise CohortError(f"client {self.client_id}: malformed label row (entries must be 0/1)")
        sums = labels.sum(axis=1)
        bad = np.flatnonzero(sums[:lc] != 1)
        if bad.size:
            raise CohortError(f"client {self.client_id}: malformed label row {int(bad[0])}")
        bad = np.flatnonzero(sums[lc:] != 0)
        if bad.size:
            raise CohortError(f"client {self.client_id}: malformed label row {int(bad[0]) + lc}")
        order = np.arange(n) if self.order is None else np.array(self.order, dtype=np.int64)
        if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
            raise CohortError(f"client {self.client_id}: order is not a permutation")
        truth = None
        if self.true_labels is not None:
            truth = np.array(self.true_labels, dtype=np.int64)
            if truth.shape != (n,):
                raise CohortError(f"client {self.client_id}: true_labels shape mismatch")
        object.__setattr__(self, "client_id", str(self.client_id))
        object.__setattr__(self, "features", _readonly(feats))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "labeled_count", lc)
        object.__setattr__(self, "order", _readonly(order))
        object.__setattr__(self, "true_labels", None if truth is None else _readonly(truth))

    @classmethod
    def from_label_vector(
        cls,
        client_id: str,
        features: np.ndarray,
        label_vector: Sequence[int] | np.ndarray,
        class_count: int,
        true_labels: np.ndarray | None = None,
    ) -> ClientDataset:
        """Build from integer labels (``-1`` = unlabeled); labeled rows move first."""
        y = np.asarray(label_vector, dtype=np.int64)
        features = np.asarray(features, dtype=np.float64)
        if y.shape != (features.shape[0],):
            raise CohortError(f"client {client_id}: label vector length mismatch")
        if np.any((y < -1) | (y >= class_count)):
            raise CohortError(f"client {client_id}: label outside [0, {class_count})")
        labeled = y >= 0
        order = np.concatenate([np.flatnonzero(labeled), np.flatnonzero(~labeled)])
        onehot = np.zeros((y.size, class_count), dtype=np.int8)
        lc = int(labeled.sum())
        onehot[np.arange(lc), y[order[:lc]]] = 1
        truth = None if true_labels is None else np.asarray(true_labels)[order]
        return cls(client_id, features[order], onehot, lc, order=order, true_labels=truth)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_count(self) -> int:
        return self.labels.shape[1]

    def label_vector(self) -> np.ndarray:
        """Integer labels in stored order, ``-1`` for unlabeled rows."""
        out = np.full(self.n, ABSTAIN, dtype=np.int64)
        out[: self.labeled_count] = self.labels[: self.labeled_count].argmax(axis=1)
        return out

    def without_labels(self) -> ClientDataset:
        """Same rows in the same stored order, all labels removed."""
        return replace(self, labels=np.zeros_like(self.labels), labeled_count=0)

    def with_features(self, features: np.ndarray) -> ClientDataset:
        return replace(self, features=features)


@dataclass(frozen=True, eq=False)
class Cohort:
    clients: tuple[ClientDataset, ...]
    class_count: int
    _offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        clients = tuple(self.clients)
        object.__setattr__(self, "clients", clients)
        ids = [c.client_id for c in clients]
        if len(set(ids)) != len(ids):
            raise CohortError("duplicate client ids")
        dims = {c.dim for c in clients}
        if len(dims) > 1:
            raise CohortError(f"dimension mismatch across clients: {sorted(dims)}")
        for c in clients:
            if c.class_count != self.class_count:
                raise CohortError(
                    f"dimension mismatch: client {c.client_id} has {c.class_count} classes, expected {self.class_count}"
                )
        sizes = np.array([c.n for c in clients], dtype=np.int64)
        object.__setattr__(self, "_offsets", _readonly(np.concatenate([[0], np.cumsum(sizes)])))

    @property
    def n(self) -> int:
        return int(self._offsets[-1])

    @property
    def dim(self) -> int:
        return self.clients[0].dim if self.clients else 0

    @property
    def client_ids(self) -> list[str]:
        return [c.client_id for c in self.clients]

    @property
    def offsets(self) -> np.ndarray:
        return self._offsets

    def client(self, client_id: str) -> ClientDataset:
        for c in self.clients:
            if c.client_id == client_id:
                return c
        raise KeyError(client_id)

    def position(self, client_id: str) -> int:
        return self.client_ids.index(client_id)

    def client_slice(self, client_id: str) -> slice:
        p = self.position(client_id)
        return slice(int(self._offsets[p]), int(self._offsets[p + 1]))

    def global_row(self, client_id: str, local_row: int) -> int:
        s = self.client_slice(client_id)
        if not 0 <= local_row < s.stop - s.start:
            raise IndexError(f"row {local_row} outside client {client_id}")
        return s.start + local_row

    def global_index(self) -> dict[tuple[str, int], int]:
        return {
            (c.client_id, i): int(self._offsets[p]) + i
            for p, c in enumerate(self.clients)
            for i in range(c.n)
        }

    def labeled_global_indices(self) -> dict[str, np.ndarray]:
        return {
            c.client_id: np.arange(c.labeled_count) + int(self._offsets[p])
            for p, c in enumerate(self.clients)
        }

    def stacked_features(self) -> np.ndarray:
        return np.vstack([c.features for c in self.clients])

    def stacked_labels(self) -> np.ndarray:
        return np.vstack([c.labels for c in self.clients]).astype(np.float64)

    def without(self, client_id: str) -> Cohort:
        return Cohort(tuple(c for c in self.clients if c.client_id != client_id), self.class_count)

    def subset(self, client_ids: Iterable[str]) -> Cohort:
        keep = set(client_ids)
        return Cohort(tuple(c for c in self.clients if c.client_id in keep), self.class_count)

    def with_unlabeled(self, client_id: str) -> Cohort:
        return Cohort(
            tuple(c.without_labels() if c.client_id == client_id else c for c in self.clients),
            self.class_count,
        )


@dataclass(frozen=True, eq=False)
class LabelAssignment:
    labels: np.ndarray
    confidences: np.ndarray

    def __post_init__(self) -> None:
        conf = np.asarray(self.confidences, dtype=np.float64)
        if np.any((conf < 0) | (conf > 1)):
            raise ValueError("confidences must lie in [0, 1]")

    def in_original_order(self, order: np.ndarray) -> LabelAssignment:
        labels = np.empty_like(self.labels)
        conf = np.empty_like(self.confidences)
        labels[order] = self.labels
        conf[order] = self.confidences
        return LabelAssignment(labels, conf)


# ---------------------------------------------------------------------------
# raw matrix format


def write_matrix(path: str | Path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise ValueError("matrix must be 2-d")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<QQ", *m.shape))
        fh.write(m.tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != MATRIX_MAGIC:
        raise CohortError(f"{path}: bad magic")
    rows, cols = struct.unpack_from("<QQ", data, 8)
    body = data[24:]
    if len(body) != rows * cols * 8:
        raise CohortError(f"{path}: truncated matrix ({len(body)} bytes for {rows}x{cols})")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)


# ---------------------------------------------------------------------------
# cohort files


def _client_files(root: Path, suffix: str) -> list[Path]:
    files = sorted(p for p in root.iterdir() if p.suffix == suffix)
    if not files:
        raise CohortError(f"no *{suffix} client files in {root}")
    return files


def _parse_label(text: str, where: str) -> int:
    text = text.strip()
    if text == "":
        return -1
    try:
        value = float(text)
    except ValueError as exc:
        raise CohortError(f"{where}: malformed label row ({text!r})") from exc
    if not value.is_integer() or value < 0:
        raise CohortError(f"{where}: malformed label row ({text!r})")
    return int(value)


def _read_csv_client(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    lines = path.read_text().splitlines()
    if not lines:
        raise CohortError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    feat_cols = [i for i, h in enumerate(header) if h.startswith("f_")]
    if [header[i] for i in feat_cols] != [f"f_{i}" for i in range(len(feat_cols))]:
        raise CohortError(f"{path}: feature columns must be f_0..f_(d-1)")
    if "label" not in header:
        raise CohortError(f"{path}: missing label column")
    li = header.index("label")
    ti = header.index("true_label") if "true_label" in header else None
    feats, labels, truth = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise CohortError(f"{path}:{lineno}: expected {len(header)} columns")
        feats.append([float(cells[i]) for i in feat_cols])
        labels.append(_parse_label(cells[li], f"{path}:{lineno}"))
        if ti is not None:
            truth.append(_parse_label(cells[ti], f"{path}:{lineno}"))
    f = np.array(feats, dtype=np.float64).reshape(len(feats), len(feat_cols))
    return f, np.array(labels, dtype=np.int64), (np.array(truth, dtype=np.int64) if ti is not None else None)


def _read_raw_client(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    m = read_matrix(path)
    if m.shape[1] < 3:
        raise CohortError(f"{path}: raw client matrix needs feature, label and true_label columns")
    f = m[:, :-2]

    def ints(col: np.ndarray) -> np.ndarray:
        out = np.where(np.isnan(col), -1, col)
        if np.any(out != np.round(out)) or np.any(out < -1):
            raise CohortError(f"{path}: malformed label row")
        return out.astype(np.int64)

    truth = ints(m[:, -1])
    return f, ints(m[:, -2]), (truth if np.any(truth >= 0) else None)


def load_cohort(path: str | Path, format: str = "csv") -> Cohort:
    """Load every client file in directory ``path``; client ids are file stems.

    An optional ``cohort.json`` may fix ``class_count``; otherwise it is the
    largest label seen plus one.
    """
    root = Path(path)
    if not root.is_dir():
        raise CohortError(f"{root}: not a directory")
    if format == "csv":
        files, reader = _client_files(root, ".csv"), _read_csv_client
    elif format == "rawmatrix":
        files, reader = _client_files(root, ".xclpmat"), _read_raw_client
    else:
        raise CohortError(f"unknown cohort format {format!r}")
    raw = [(p.stem, *reader(p)) for p in files]
    dims = {f.shape[1] for _, f, _, _ in raw}
    if len(dims) != 1:
        raise CohortError(f"dimension mismatch across clients: {sorted(dims)}")
    meta_path = root / "cohort.json"
    if meta_path.exists():
        class_count = int(json.loads(meta_path.read_text())["class_count"])
    else:
        seen = [int(y.max()) for _, _, y, _ in raw if y.size] + [
            int(t.max()) for _, _, _, t in raw if t is not None and t.size
        ]
        class_count = max(seen, default=-1) + 1
        if class_count < 1:
            raise CohortError("cannot infer class_count without labels; add cohort.json")
    clients = tuple(
        ClientDataset.from_label_vector(cid, f, y, class_count, true_labels=t) for cid, f, y, t in raw
    )
    return Cohort(clients, class_count)


def save_cohort(cohort: Cohort, path: str | Path, format: str = "csv") -> None:
    """Write ``cohort`` so that :func:`load_cohort` reproduces it exactly.

    Rows are written in stored (labeled-first) order.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "cohort.json").write_text(json.dumps({"class_count": cohort.class_count}))
    for c in cohort.clients:
        y = c.label_vector()
        truth = c.true_labels
        if format == "csv":
            d = c.dim
            header = [f"f_{i}" for i in range(d)] + ["label"] + (["true_label"] if truth is not None else [])
            out = [",".join(header)]
            for i in range(c.n):
                cells = [repr(float(v)) for v in c.features[i]]
                cells.append("" if y[i] < 0 else str(int(y[i])))
                if truth is not None:
                    cells.append("" if truth[i] < 0 else str(int(truth[i])))
                out.append(",".join(cells))
            (root / f"{c.client_id}.csv").write_text("\n".join(out) + "\n")
        elif format == "rawmatrix":
            t = np.full(c.n, np.nan) if truth is None else np.where(truth < 0, np.nan, truth)
            m = np.column_stack([c.features, np.where(y < 0, np.nan, y), t])
            write_matrix(root / f"{c.client_id}.xclpmat", m)
        else:
            raise CohortError(f"unknown cohort format {format!r}")


# ---------------------------------------------------------------------------
# synthetic data


def _class_means(d: int, C: int, seed: int, separation: float) -> np.ndarray:
    rng = generator(seed)
    means = rng.standard_normal((C, d))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    return separation * means


def _client_classes(j: int, C: int, heterogeneity: str) -> np.ndarray:
    if heterogeneity == "iid":
        return np.arange(C)
    if heterogeneity == "class_skew":
        width = max(1, math.ceil(C / 2))
        return (j + np.arange(width)) % C
    raise ValueError(f"unknown heterogeneity {heterogeneity!r}")


def sample_blobs(
    means: np.ndarray, classes: np.ndarray, noise: float, rng: np.random.Generator
) -> np.ndarray:
    """``means`` is ``C x d``, or ``C x modes x d`` for classes made of several blobs."""
    if means.ndim == 3:
        modes = rng.integers(0, means.shape[1], size=classes.size)
        centers = means[classes, modes]
    else:
        centers = means[classes]
    return centers + noise * rng.standard_normal((classes.size, means.shape[-1]))


def _blob_means(d: int, C: int, seed: int, separation: float, modes: int) -> np.ndarray:
    if modes < 1:
        raise ValueError("modes must be >= 1")
    if modes == 1:
        return _class_means(d, C, seed, separation)
    return _class_means(d, C * modes, seed, separation).reshape(C, modes, d)


def split_synthetic(
    n_clients: int,
    per_client: int,
    d: int,
    C: int,
    label_fraction: float,
    heterogeneity: str = "iid",
    seed: int = 0,
    *,
    separation: float = 1.0,
    noise: float = 1.0,
    modes: int = 1,
) -> Cohort:
    """Gaussian-blob cohort with ``round(label_fraction * n)`` labels in total.

    Under ``iid`` every client holds all classes in equal proportion; under
    ``class_skew`` client ``j`` only draws from ``ceil(C/2)`` consecutive
    classes starting at ``j mod C``.  With ``modes > 1`` each class is a
    union of that many blobs, each point picking one uniformly.  Ground
    truth for every row is kept in ``true_labels``.
    """
    if not 0.0 <= label_fraction <= 1.0:
        raise ValueError("label_fraction must lie in [0, 1]")
    total = n_clients * per_client
    if label_fraction > 0 and C > total:
        raise ValueError(f"cannot place a labeled example for each of {C} classes among {total} points")
    means = _blob_means(d, C, seed, separation, modes)
    rng = generator(seed + 1)
    n_labels = round(label_fraction * total)
    per = [n_labels // n_clients + (1 if j < n_labels % n_clients else 0) for j in range(n_clients)]
    clients = []
    for j in range(n_clients):
        allowed = _client_classes(j, C, heterogeneity)
        classes = allowed[(np.arange(per_client) + j) % allowed.size]
        classes = rng.permutation(classes)
        feats = sample_blobs(means, classes, noise, rng)
        # labeled rows: round-robin over classes so each client's labels are balanced
        by_class = [np.flatnonzero(classes == c) for c in allowed]
        chosen: list[int] = []
        depth = 0
        while len(chosen) < per[j]:
            for idx in by_class:
                if depth < idx.size and len(chosen) < per[j]:
                    chosen.append(int(idx[depth]))
            depth += 1
        y = np.full(per_client, -1, dtype=np.int64)
        y[chosen] = classes[chosen]
        clients.append(ClientDataset.from_label_vector(f"client{j:03d}", feats, y, C, true_labels=classes))
    return Cohort(tuple(clients), C)


def synthetic_test_set(
    d: int, C: int, size: int, seed: int = 0, *, separation: float = 1.0, noise: float = 1.0, modes: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Balanced held-out sample from the same blobs as ``split_synthetic(seed=seed)``."""
    means = _blob_means(d, C, seed, separation, modes)
    rng = generator(seed + 2)
    classes = np.arange(size) % C
    return sample_blobs(means, classes, noise, rng), classes
