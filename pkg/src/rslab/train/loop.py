"""Objectives, mitigation add-ons, the training loop and evaluation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..analysis import EmpiricalRemap, rs_risk
from ..inference import (
    batch_abduce, batch_fuzzy_satisfaction, batch_pnsp_label_probs, batch_pnsp_nll, batch_semantic_loss,
    joint_from_factors, slot_indicators, softmax,
)
from ..logic import InferenceTable, build_beta_star
from .data import Dataset
from .model import Extractor, Unsupported, softmax_backward

OBJECTIVES = ("pnsp", "sl", "ltn", "abl")


class Divergence(RuntimeError):
    """Training produced a non-finite loss or parameters."""

    def __init__(self, epoch: int, diagnostics: dict):
        self.epoch = epoch
        self.diagnostics = diagnostics
        super().__init__(f"training diverged at epoch {epoch}: {diagnostics}")


@dataclass
class TrainConfig:
    """Objective, mitigation weights and optimiser settings.

    ``supervision`` is the fraction of examples whose concepts are revealed
    (chosen with ``supervision_seed``); ``supervision_mask`` gives an explicit
    ``(N, k)`` boolean mask instead.  ``tau`` is the smoothing temperature.
    """

    objective: str = "pnsp"
    mu: float = 1.0
    lr: float = 0.5
    epochs: int = 500
    batch_size: int | None = None
    seed: int = 0
    entropy: float = 0.0
    tau: float = 1.0
    reconstruction: float = 0.0
    supervision: float = 0.0
    supervision_seed: int | None = None
    supervision_mask: np.ndarray | None = None
    supervision_weight: float = 1.0
    contrastive: float = 0.0
    contrastive_temperature: float = 0.5
    nll_threshold: float = 1e-3
    log_every: int = 1

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.objective == "sl" and not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        for name in ("entropy", "reconstruction", "contrastive", "supervision_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 <= self.supervision <= 1:
            raise ValueError("supervision fraction must lie in [0, 1]")
        if self.tau < 1:
            raise ValueError("smoothing temperature must be >= 1")
        if self.lr <= 0 or self.epochs < 1:
            raise ValueError("lr must be > 0 and epochs >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_json(self) -> dict:
        out = asdict(self)
        if self.supervision_mask is not None:
            out["supervision_mask"] = np.asarray(self.supervision_mask).astype(int).tolist()
        return out


def supervision_mask(cfg: TrainConfig, n: int, k: int) -> np.ndarray:
    if cfg.supervision_mask is not None:
        mask = np.asarray(cfg.supervision_mask, dtype=bool)
        if mask.shape != (n, k):
            raise ValueError(f"supervision mask has shape {mask.shape}, expected {(n, k)}")
        return mask
    mask = np.zeros((n, k), dtype=bool)
    if cfg.supervision > 0:
        rng = np.random.default_rng(cfg.seed if cfg.supervision_seed is None else cfg.supervision_seed)
        rows = rng.permutation(n)[: int(round(cfg.supervision * n))]
        mask[rows] = True
    return mask


@dataclass
class Batch:
    X: np.ndarray
    G: np.ndarray
    y_index: np.ndarray
    mask: np.ndarray
    X_pos: np.ndarray | None = None


def _entropy_grads(probs, onehots, weight: float):
    """Loss ``-weight * H(mean_n p_n(C))`` and logit gradients."""
    J = joint_from_factors(probs)
    n = J.shape[0]
    q = np.maximum(J.mean(axis=0), 1e-300)
    H = -float(np.sum(q * np.log(q)))
    g = weight * (np.log(q) + 1.0) / n  # d(-w H)/dJ_n
    Jg = J * g
    s = Jg.sum(axis=1, keepdims=True)
    return -weight * H, [Jg @ oh - s * p for p, oh in zip(probs, onehots)]


def objective_grads(model: Extractor, batch: Batch, cfg: TrainConfig, table: InferenceTable, knowledge=None,
                    extra_prob_grads=None):
    """Total loss, parameter gradients and loss parts on one batch.

    ``extra_prob_grads(probs) -> (loss, [dL/dp_i])`` lets callers add terms on
    the concept probabilities (the ensemble diversity term uses it).
    """
    fw = model.forward(batch.X)
    probs = fw.probs
    n = batch.X.shape[0]
    onehots = slot_indicators(table.concepts)
    parts = {}
    dlog = [np.zeros_like(p) for p in probs]
    dlabel = None
    if cfg.objective == "pnsp":
        L, G = batch_pnsp_nll(probs, batch.y_index, table)
        parts["pnsp"] = float(L.mean())
        dlog = [d + g / n for d, g in zip(dlog, G)]
    elif cfg.objective == "sl":
        if fw.label_logits is None:
            raise Unsupported("the SL objective needs an extractor with a label head")
        q = softmax(fw.label_logits)
        rows = np.arange(n)
        ce = -np.log(q[rows, batch.y_index])
        dlabel = q.copy()
        dlabel[rows, batch.y_index] -= 1.0
        dlabel /= n
        L, G = batch_semantic_loss(probs, batch.y_index, table)
        parts["ce"] = float(ce.mean())
        parts["sl"] = cfg.mu * float(L.mean())
        dlog = [d + cfg.mu * g / n for d, g in zip(dlog, G)]
    elif cfg.objective == "ltn":
        if any(c != 2 for c in table.concepts.cards):
            raise Unsupported("the LTN objective needs binary concepts")
        sat, G = batch_fuzzy_satisfaction(probs, table.labels.vectors[batch.y_index], knowledge,
                                          table.concepts, table.labels)
        parts["ltn"] = float(1.0 - sat.mean())
        dlog = [d - g / n for d, g in zip(dlog, G)]
    else:
        c_bar = np.stack([p.argmax(axis=1) for p in probs], axis=1)
        c_hat = batch_abduce(c_bar, batch.y_index, table)
        rows = np.arange(n)
        parts["abl"] = float(-sum(np.log(p[rows, c_hat[:, i]]) for i, p in enumerate(probs)).mean())
        for i, p in enumerate(probs):
            g = p.copy()
            g[rows, c_hat[:, i]] -= 1.0
            dlog[i] = dlog[i] + g / n
    if cfg.entropy > 0:
        loss, G = _entropy_grads(probs, onehots, cfg.entropy)
        parts["entropy"] = loss
        dlog = [d + g for d, g in zip(dlog, G)]
    if batch.mask.any():
        w = cfg.supervision_weight
        total = 0.0
        for i, p in enumerate(probs):
            rows = np.flatnonzero(batch.mask[:, i])
            if rows.size == 0:
                continue
            total -= float(np.log(p[rows, batch.G[rows, i]]).sum())
            g = np.zeros_like(p)
            g[rows] = p[rows]
            g[rows, batch.G[rows, i]] -= 1.0
            dlog[i] = dlog[i] + w * g / n
        parts["supervision"] = w * total / n
    drecon = None
    if cfg.reconstruction > 0:
        if fw.recon is None:
            raise Unsupported("reconstruction needs an extractor with a decoder")
        diff = fw.recon - batch.X
        d = batch.X.shape[1]
        parts["reconstruction"] = cfg.reconstruction * float((diff ** 2).sum() / (n * d))
        drecon = cfg.reconstruction * 2.0 * diff / (n * d)
    if extra_prob_grads is not None:
        loss, dps = extra_prob_grads(probs)
        parts["extra"] = loss
        dlog = [d + softmax_backward(p, dp) for d, p, dp in zip(dlog, probs, dps)]
    grads = None
    if cfg.contrastive > 0:
        if batch.X_pos is None:
            raise ValueError("contrastive training needs positive views")
        fw2 = model.forward(batch.X_pos)
        T = cfg.contrastive_temperature
        S = sum(p @ p2.T for p, p2 in zip(probs, fw2.probs)) / T
        A = softmax(S, axis=1)
        parts["contrastive"] = cfg.contrastive * float(-np.log(np.diag(A)).mean())
        dS = cfg.contrastive * (A - np.eye(n)) / (n * T)
        dlog = [d + softmax_backward(p, dS @ p2) for d, p, p2 in zip(dlog, probs, fw2.probs)]
        dpos = [softmax_backward(p2, dS.T @ p) for p, p2 in zip(probs, fw2.probs)]
        g2 = model.backward(fw2, dpos)
        grads = g2
    g1 = model.backward(fw, dlog, dlabel, drecon)
    if grads is not None:
        g1 = {k: g1[k] + grads[k] for k in g1}
    return float(sum(parts.values())), g1, parts


@dataclass
class EvalMetrics:
    label_accuracy: float
    concept_accuracy: float
    concept_accuracy_per_slot: list
    concept_nll: float
    label_nll: float
    rs_risk: float
    collapse: float
    mean_concept_entropy: float
    marginal_concept_entropy: float
    confusion: list
    joint_confusion: dict

    def to_json(self) -> dict:
        out = asdict(self)
        for k in ("concept_nll", "label_nll", "rs_risk"):
            v = out[k]
            if isinstance(v, float) and not math.isfinite(v):
                out[k] = "inf" if v > 0 else ("-inf" if v < 0 else "nan")
        return out


def predict_labels(model, X: np.ndarray, table: InferenceTable, mode: str = "pnsp", probs=None) -> np.ndarray:
    """Flat label index per input (``-1`` when no label is consistent).

    ``pnsp`` takes the argmax of the probabilistic layer, ``head`` the direct
    label head and ``argmax`` the label(s) consistent with the most likely
    concept vector (lexicographically first); the latter is the crisp LTN and
    ABL readout.
    """
    if probs is None:
        probs = model.predict(X)
    if mode == "pnsp":
        return np.argmax(batch_pnsp_label_probs(probs, table), axis=1)
    if mode == "head":
        fw = model.forward(X)
        if fw.label_logits is None:
            raise Unsupported("extractor has no label head")
        return np.argmax(fw.label_logits, axis=1)
    if mode == "argmax":
        c_hat = np.stack([p.argmax(axis=1) for p in probs], axis=1)
        rows = table.consistent[table.concepts.indices(c_hat)]
        return np.where(rows.any(axis=1), rows.argmax(axis=1), -1)
    raise ValueError(f"unknown label readout {mode!r}")


def readout_for(objective: str) -> str:
    return {"pnsp": "pnsp", "sl": "head", "ltn": "argmax", "abl": "argmax"}[objective]


def evaluate(model, ds: Dataset, table: InferenceTable | None = None, mode: str = "pnsp") -> EvalMetrics:
    """Label and concept metrics; ``label_nll`` uses the probabilistic layer.

    ``mean_concept_entropy`` averages the per-slot entropy of each input's
    prediction; ``marginal_concept_entropy`` is the entropy of the joint
    concept distribution averaged over the dataset, the quantity the entropy
    regulariser maximises.
    """
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    table = table or build_beta_star(ds.task)
    probs = model.predict(ds.X)
    n = len(ds)
    rows = np.arange(n)
    pred_y = predict_labels(model, ds.X, table, mode, probs)
    c_hat = np.stack([p.argmax(axis=1) for p in probs], axis=1)
    per_slot = [float((c_hat[:, i] == ds.G[:, i]).mean()) for i in range(ds.G.shape[1])]
    with np.errstate(divide="ignore"):
        concept_nll = float(-sum(np.log(p[rows, ds.G[:, i]]) for i, p in enumerate(probs)).mean())
        py = batch_pnsp_label_probs(probs, table)
        label_nll = float(-np.log(py[rows, ds.y_index]).mean())
        ent = [-(p * np.log(np.where(p > 0, p, 1.0))).sum(axis=1) for p in probs]
        q = joint_from_factors(probs).mean(axis=0)
        marginal = float(-(q * np.log(np.where(q > 0, q, 1.0))).sum())
    conf = []
    for i, c in enumerate(table.concepts.cards):
        m = np.zeros((c, c), dtype=np.int64)
        np.add.at(m, (ds.G[:, i], c_hat[:, i]), 1)
        conf.append(m.tolist())
    g_idx = table.concepts.indices(ds.G)
    c_idx = table.concepts.indices(c_hat)
    gt, pr = np.unique(g_idx), np.unique(c_idx)
    jc = np.zeros((gt.size, pr.size), dtype=np.int64)
    np.add.at(jc, (np.searchsorted(gt, g_idx), np.searchsorted(pr, c_idx)), 1)
    collapse = float(np.clip(1.0 - pr.size / gt.size, 0.0, 1.0))
    return EvalMetrics(
        label_accuracy=float((pred_y == ds.y_index).mean()),
        concept_accuracy=float(np.all(c_hat == ds.G, axis=1).mean()),
        concept_accuracy_per_slot=per_slot,
        concept_nll=concept_nll,
        label_nll=label_nll,
        rs_risk=rs_risk(concept_nll, label_nll),
        collapse=collapse,
        mean_concept_entropy=float(np.mean(ent)),
        marginal_concept_entropy=marginal,
        confusion=conf,
        joint_confusion={
            "rows": [list(table.concepts.vector(i)) for i in gt],
            "cols": [list(table.concepts.vector(i)) for i in pr],
            "counts": jc.tolist(),
        },
    )


def estimate_alpha(model, ds: Dataset) -> EmpiricalRemap:
    """Average predicted concept distribution over the inputs of each support vector."""
    space = ds.task.concepts
    J = joint_from_factors(model.predict(ds.X))
    g_idx = space.indices(ds.G)
    rows = []
    for g in ds.task.support:
        sel = g_idx == space.index(g)
        if not sel.any():
            raise ValueError(f"support vector {g} does not occur in the dataset")
        r = J[sel].mean(axis=0)
        rows.append(r / r.sum())
    return EmpiricalRemap(space, tuple(ds.task.support), np.array(rows))


@dataclass
class TrainResult:
    models: list
    trajectory: list = field(default_factory=list)
    epochs_run: int = 0
    converged: bool = False

    @property
    def model(self):
        return self.models[0]


def _streams(seed: int):
    shuffle, views = [np.random.default_rng(s) for s in np.random.SeedSequence([seed, 7]).spawn(2)]
    return shuffle, views


def fit(models: list, ds: Dataset, cfg: TrainConfig, table: InferenceTable | None = None,
        diversity: float = 0.0) -> TrainResult:
    """Gradient descent on one or more extractors sharing the data order.

    With several models and ``diversity > 0`` each model also minimises its
    mean per-slot probability agreement with the other members (computed on
    the same batch, all members updated together).
    """
    table = table or build_beta_star(ds.task)
    if cfg.objective == "ltn" and any(c != 2 for c in table.concepts.cards):
        raise Unsupported("the LTN objective needs binary concepts")
    if cfg.reconstruction > 0 and ds.renderer.render != "blockwise":
        raise Unsupported("reconstruction is only defined for the blockwise render")
    for m in models:
        m.temperature = cfg.tau
    n, k = ds.G.shape
    mask = supervision_mask(cfg, n, k)
    shuffle_rng, view_rng = _streams(cfg.seed)
    r = len(models)
    pairs = r * (r - 1) / 2
    result = TrainResult(models)
    bs = cfg.batch_size or n
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n) if bs < n else np.arange(n)
        losses = np.zeros(r)
        for lo in range(0, n, bs):
            idx = order[lo: lo + bs]
            X_pos = ds.renderer(ds.G[idx], view_rng) if cfg.contrastive > 0 else None
            batch = Batch(ds.X[idx], ds.G[idx], ds.y_index[idx], mask[idx], X_pos)
            member_probs = [m.predict(batch.X) for m in models] if diversity > 0 and r > 1 else None
            step = []
            for j, m in enumerate(models):
                extra = None
                if member_probs is not None:
                    others = [member_probs[o] for o in range(r) if o != j]
                    nb = len(idx)

                    def extra(probs, others=others, nb=nb):
                        agree = sum(float((p * q[i]).sum()) for q in others for i, p in enumerate(probs)) / nb
                        dps = [diversity * sum(q[i] for q in others) / (nb * pairs) for i in range(len(probs))]
                        return diversity * agree / (2 * pairs), dps

                loss, grads, _ = objective_grads(m, batch, cfg, table, ds.task.knowledge, extra)
                losses[j] += loss * len(idx) / n
                step.append(grads)
            for m, grads in zip(models, step):
                m.step(grads, cfg.lr)
        if not np.all(np.isfinite(losses)) or not all(np.all(np.isfinite(m.flat())) for m in models):
            raise Divergence(epoch, {"loss": losses.tolist(), "lr": cfg.lr, "objective": cfg.objective})
        done = epoch == cfg.epochs
        if epoch % cfg.log_every == 0 or done:
            entry = {"epoch": epoch, "loss": [float(v) for v in losses]}
            nlls = []
            for j, m in enumerate(models):
                probs = m.predict(ds.X)
                py = batch_pnsp_label_probs(probs, table)
                with np.errstate(divide="ignore"):
                    nll = float(-np.log(py[np.arange(n), ds.y_index]).mean())
                nlls.append(nll)
                c_hat = np.stack([p.argmax(axis=1) for p in probs], axis=1)
                entry.setdefault("label_nll", []).append(nll)
                entry.setdefault("label_accuracy", []).append(
                    float((predict_labels(m, ds.X, table, readout_for(cfg.objective), probs) == ds.y_index).mean()))
                entry.setdefault("concept_accuracy", []).append(float(np.all(c_hat == ds.G, axis=1).mean()))
            result.trajectory.append(entry)
            result.epochs_run = epoch
            if max(nlls) < cfg.nll_threshold:
                result.converged = True
                break
        result.epochs_run = epoch
    return result


def train(model: Extractor, ds: Dataset, cfg: TrainConfig, table: InferenceTable | None = None) -> TrainResult:
    """Train one extractor in place and return it with its metric trajectory.

    Stops once the training label NLL (probabilistic layer) drops below
    ``cfg.nll_threshold`` or after ``cfg.epochs`` epochs.
    """
    return fit([model], ds, cfg, table)
