"""Federated semi-supervised training with pseudo-labels.

Each round the server samples clients, broadcasts the model, and every
sampled client trains a few local epochs on mixed batches: its labeled rows
with their true labels, and its unlabeled rows with pseudo-labels weighted
by their confidence.  The server then averages the returned models.

Pseudo-labelers: ``xclp`` (the cross-client protocol over the sampled
clients), ``perclient_lp`` (the same propagation restricted to one client's
data), ``network`` (the current classifier's own predictions) and ``none``
(unlabeled rows are ignored).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from xclp._rng import derive_seed, generator
from xclp.data_model import ABSTAIN, ClientDataset, Cohort, LabelAssignment
from xclp.graph import build_graph
from xclp.lsh import ProjectionSpec, generate_projection, hamming_matrix, hash_features
from xclp.oracle import propagate_closed_form
from xclp.protocol import XCLPConfig, row_confidences, run_xclp

PSEUDOLABELERS = ("xclp", "perclient_lp", "network", "none")


class StratificationError(RuntimeError):
    """A round under XCLP ended up without any labeled point."""


# ---------------------------------------------------------------------------
# model


@dataclass(eq=False)
class ModelParams:
    """Frozen featurizer ``phi`` (``None`` = identity) and a linear softmax head.

    With ``relu`` set the features are ``max(X @ phi, 0)`` (random ReLU
    features), otherwise ``X @ phi``.
    """

    W: np.ndarray  # d' x C
    b: np.ndarray  # C
    phi: np.ndarray | None = None  # d x d'
    relu: bool = False

    def features(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.phi is None:
            return X
        V = X @ self.phi
        return np.maximum(V, 0.0) if self.relu else V

    def logits(self, X: np.ndarray) -> np.ndarray:
        return self.features(X) @ self.W + self.b

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.logits(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.logits(X).argmax(axis=1)

    def copy(self) -> ModelParams:
        return dataclasses.replace(self, W=self.W.copy(), b=self.b.copy())

    def to_dict(self) -> dict:
        return {
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "phi": None if self.phi is None else self.phi.tolist(),
            "relu": self.relu,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ModelParams:
        phi = d.get("phi")
        return cls(
            np.array(d["W"], dtype=np.float64),
            np.array(d["b"], dtype=np.float64),
            None if phi is None else np.array(phi, dtype=np.float64),
            bool(d.get("relu", False)),
        )


def init_model(d: int, C: int, featurizer: str = "identity", feature_dim: int | None = None, seed: int = 0) -> ModelParams:
    rng = generator(derive_seed(seed, "init-model"))
    if featurizer == "identity":
        phi, dp = None, d
    elif featurizer in ("random_projection", "random_relu"):
        dp = feature_dim or d
        phi = rng.standard_normal((d, dp)) / math.sqrt(dp)
    else:
        raise ValueError(f"unknown featurizer {featurizer!r}")
    return ModelParams(0.01 * rng.standard_normal((dp, C)), np.zeros(C), phi, featurizer == "random_relu")


def average_models(models: Iterable[ModelParams]) -> ModelParams:
    """Uniform element-wise mean; the featurizer is frozen and shared."""
    models = list(models)
    if not models:
        raise ValueError("nothing to average")
    # offsets from the first model keep identical inputs an exact fixed point
    ref = models[0]
    W = ref.W + np.mean([m.W - ref.W for m in models], axis=0)
    b = ref.b + np.mean([m.b - ref.b for m in models], axis=0)
    return dataclasses.replace(models[0], W=W, b=b)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def weighted_cross_entropy(W, b, V, y, weights, batch_size: int | None = None):
    """Loss ``sum_i w_i * CE_i / batch_size`` and its gradients in ``W`` and ``b``.

    Weights are used as given; a row with ``w = 0`` has no effect.
    """
    V = np.asarray(V, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    m = batch_size or max(1, V.shape[0])
    z = V @ W + b
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(V.shape[0])
    loss = float(-(w * logp[rows, y]).sum() / m)
    g = np.exp(logp)
    g[rows, y] -= 1.0
    g *= (w / m)[:, None]
    return loss, V.T @ g, g.sum(axis=0)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    balanced_accuracy: float
    per_class: dict[int, float]


def evaluate(model: ModelParams | Callable, X: np.ndarray, y: np.ndarray, C: int | None = None) -> EvalResult:
    """Accuracy, per-class recall and their mean (balanced accuracy)."""
    y = np.asarray(y, dtype=np.int64)
    pred = model.predict(X) if isinstance(model, ModelParams) else np.asarray(model(X))
    C = C or int(y.max()) + 1
    acc = float(np.mean(pred == y)) if y.size else 0.0
    per = {c: float(np.mean(pred[y == c] == c)) for c in range(C) if np.any(y == c)}
    bal = float(np.mean(list(per.values()))) if per else 0.0
    return EvalResult(acc, bal, per)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RoundConfig:
    T: int = 200
    tau: float = 0.5
    E: int = 5
    batch_labeled: int = 50  # |B_L| = min(batch_labeled, labels held); |B_U| = |B_L|
    lr: float = 0.1
    horizon: float | None = None  # rounds until the cosine schedule reaches 0; default 2000 * T / 1500
    featurizer: str = "identity"
    feature_dim: int | None = None
    seed: int = 0
    xclp: XCLPConfig = field(default_factory=lambda: XCLPConfig(L=1024, k=3, hamming_protocol="plaintext_debug"))

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.E < 1:
            raise ValueError("E must be >= 1")
        if self.batch_labeled < 1:
            raise ValueError("batch_labeled must be >= 1")
        if isinstance(self.xclp, Mapping):
            object.__setattr__(self, "xclp", XCLPConfig.from_dict(self.xclp))

    def learning_rate(self, t: int) -> float:
        H = self.horizon if self.horizon is not None else 2000.0 * self.T / 1500.0
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * min(t, H) / H))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["xclp"] = self.xclp.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> RoundConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# pseudo-labels


def local_label_propagation(client: ClientDataset, V: np.ndarray, cfg: XCLPConfig) -> LabelAssignment:
    """Label propagation over one client's own points only."""
    n = client.n
    if n < 2:
        return LabelAssignment(np.full(n, ABSTAIN), np.zeros(n))
    projection = generate_projection(ProjectionSpec(cfg.seed, cfg.L, V.shape[1]))
    code = hash_features(V, projection)
    graph = build_graph(hamming_matrix(code, code), cfg.L, min(cfg.k, n - 1))
    res = propagate_closed_form(graph.normalized, client.labels.astype(np.float64), cfg.alpha)
    return LabelAssignment(res.labels, res.confidences)


def _pseudo_labels(
    kind: str, sampled: list[ClientDataset], embedded: dict[str, np.ndarray], model: ModelParams, cfg: RoundConfig, t: int, C: int
) -> dict[str, LabelAssignment]:
    if kind == "none":
        return {}
    if kind == "network":
        out = {}
        for c in sampled:
            p = model.predict_proba(c.features)
            out[c.client_id] = LabelAssignment(p.argmax(axis=1), row_confidences(p))
        return out
    if kind == "perclient_lp":
        return {c.client_id: local_label_propagation(c, embedded[c.client_id], cfg.xclp) for c in sampled}
    # xclp over the sampled clients, on their embedded features
    if sum(c.labeled_count for c in sampled) == 0:
        raise StratificationError(f"round {t}: no labeled point among the sampled clients")
    cohort = Cohort(tuple(c.with_features(embedded[c.client_id]) for c in sampled), C)
    xcfg = cfg.xclp
    if not xcfg.k < cohort.n:
        xcfg = dataclasses.replace(xcfg, k=max(1, cohort.n - 1))
    return dict(run_xclp(cohort, xcfg).assignments)


def _sample_clients(cohort: Cohort, tau: float, rng: np.random.Generator, stratify: bool) -> list[ClientDataset]:
    clients = list(cohort.clients)
    if not stratify:
        m = max(1, round(tau * len(clients)))
        idx = np.sort(rng.choice(len(clients), size=m, replace=False))
        return [clients[i] for i in idx]
    labeled = [i for i, c in enumerate(clients) if c.labeled_count > 0]
    unlabeled = [i for i, c in enumerate(clients) if c.labeled_count == 0]
    picks = []
    for group in (labeled, unlabeled):
        if group:
            m = max(1, round(tau * len(group))) if group is labeled else round(tau * len(group))
            picks.extend(rng.choice(group, size=min(m, len(group)), replace=False).tolist())
    return [clients[i] for i in sorted(picks)]


# ---------------------------------------------------------------------------
# training


def _local_update(
    model: ModelParams,
    client: ClientDataset,
    V: np.ndarray,
    pseudo: LabelAssignment | None,
    cfg: RoundConfig,
    lr: float,
    rng: np.random.Generator,
) -> ModelParams | None:
    lc = client.labeled_count
    y_lab = client.label_vector()[:lc]
    unl = np.arange(lc, client.n)
    if pseudo is not None and unl.size:
        y_unl = pseudo.labels[lc:]
        w_unl = np.where(y_unl == ABSTAIN, 0.0, pseudo.confidences[lc:])
        y_unl = np.where(y_unl == ABSTAIN, 0, y_unl)
    else:
        unl = unl[:0]
        y_unl = w_unl = np.zeros(0)
    if lc == 0 and unl.size == 0:
        return None
    b = min(cfg.batch_labeled, lc) if lc else min(cfg.batch_labeled, unl.size)
    # an epoch is one pass over the larger pool; the smaller one is cycled
    steps = max(math.ceil(lc / b), math.ceil(unl.size / b))
    W, bias = model.W.copy(), model.b.copy()
    for _ in range(cfg.E):
        lab_order = rng.permutation(lc)
        unl_order = rng.permutation(unl.size)
        for s in range(steps):
            window = np.arange(s * b, (s + 1) * b)
            li = np.take(lab_order, window, mode="wrap") if lc else window[:0]
            ui = np.take(unl_order, window, mode="wrap") if unl.size else window[:0]
            rows = np.concatenate([li, unl[ui]])
            y = np.concatenate([y_lab[li], y_unl[ui]]).astype(np.int64)
            w = np.concatenate([np.ones(li.size), w_unl[ui]])
            _, gW, gb = weighted_cross_entropy(W, bias, V[rows], y, w, batch_size=rows.size)
            W -= lr * gW
            bias -= lr * gb
    return dataclasses.replace(model, W=W, b=bias)


@dataclass
class TrainResult:
    model: ModelParams
    history: list[dict]


def train_fedavg_xclp(
    cohort: Cohort,
    config: RoundConfig,
    pseudolabeler: str = "xclp",
    *,
    test_set: tuple[np.ndarray, np.ndarray] | None = None,
    on_round: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run ``config.T`` rounds; one metrics record per round."""
    if pseudolabeler not in PSEUDOLABELERS:
        raise ValueError(f"pseudolabeler must be one of {PSEUDOLABELERS}")
    C = cohort.class_count
    model = init_model(cohort.dim, C, config.featurizer, config.feature_dim, config.seed)
    stratify = pseudolabeler == "xclp" and any(c.labeled_count == 0 for c in cohort.clients)
    history = []
    for t in range(config.T):
        rng = generator(derive_seed(config.seed, "round", t))
        sampled = _sample_clients(cohort, config.tau, rng, stratify)
        embedded = {c.client_id: model.features(c.features) for c in sampled}
        pseudo = _pseudo_labels(pseudolabeler, sampled, embedded, model, config, t, C)
        lr = config.learning_rate(t)
        updates = []
        for c in sampled:
            crng = generator(derive_seed(config.seed, "local", t, c.client_id))
            new = _local_update(model, c, embedded[c.client_id], pseudo.get(c.client_id), config, lr, crng)
            if new is not None:
                updates.append(new)
        if updates:
            model = average_models(updates)
        record = {"round": t + 1, **_pseudo_metrics(sampled, pseudo)}
        record["accuracy"] = evaluate(model, *test_set, C).accuracy if test_set is not None else None
        history.append(record)
        if on_round is not None:
            on_round(record)
    return TrainResult(model, history)


def _pseudo_metrics(sampled: list[ClientDataset], pseudo: Mapping[str, LabelAssignment]) -> dict:
    if not pseudo:
        return {"pseudo_label_accuracy": None, "mean_confidence": None, "abstain_rate": None}
    hits = known = total = abstain = 0
    conf = 0.0
    for c in sampled:
        a = pseudo.get(c.client_id)
        if a is None:
            continue
        lc = c.labeled_count
        labels, confs = a.labels[lc:], a.confidences[lc:]
        total += labels.size
        abstain += int(np.sum(labels == ABSTAIN))
        conf += float(confs.sum())
        if c.true_labels is not None:
            truth = c.true_labels[lc:]
            ok = truth >= 0
            hits += int(np.sum(labels[ok] == truth[ok]))
            known += int(ok.sum())
    return {
        "pseudo_label_accuracy": hits / known if known else None,
        "mean_confidence": conf / total if total else None,
        "abstain_rate": abstain / total if total else None,
    }


def write_metrics(history: Iterable[Mapping], path) -> None:
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
