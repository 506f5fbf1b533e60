"""Diverse ensembles, per-slot uncertainty and concept-query selection."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..logic import InferenceTable, build_beta_star
from .data import Dataset
from .loop import TrainConfig, evaluate, fit, readout_for


@dataclass
class Ensemble:
    members: list
    excluded: list = field(default_factory=list)
    slot_entropy: dict = field(default_factory=dict)
    trajectory: list = field(default_factory=list)

    def mean_probs(self, X: np.ndarray) -> list[np.ndarray]:
        outs = [m.predict(X) for m in self.members]
        return [np.mean([o[i] for o in outs], axis=0) for i in range(len(outs[0]))]

    def entropy(self, X: np.ndarray) -> np.ndarray:
        """``(N, k)`` entropy of the member-averaged per-slot distributions (nats)."""
        cols = []
        for p in self.mean_probs(X):
            logp = np.log(np.where(p > 0, p, 1.0))
            cols.append(-(p * logp).sum(axis=1))
        return np.stack(cols, axis=1)


def train_bears_ensemble(make_model, ds: Dataset, cfg: TrainConfig, size: int = 5, diversity: float = 1.0,
                         accuracy_floor: float = 0.9, table: InferenceTable | None = None) -> Ensemble:
    """Train ``size`` extractors together with an agreement penalty.

    ``make_model(j)`` builds member ``j`` (distinct seeds).  Every member fits
    the labels under ``cfg``; ``diversity`` weights the mean pairwise dot
    product of their per-slot distributions, which pushes members apart on
    concepts the labels leave free.  Members whose label accuracy falls below
    ``accuracy_floor`` are excluded and reported.
    """
    if not 2 <= size <= 16:
        raise ValueError(f"ensemble size must lie in [2, 16], got {size}")
    if diversity < 0:
        raise ValueError("diversity weight must be >= 0")
    table = table or build_beta_star(ds.task)
    models = [make_model(j) for j in range(size)]
    result = fit(models, ds, cfg, table, diversity=diversity)
    kept, excluded = [], []
    for j, m in enumerate(models):
        acc = evaluate(m, ds, table, readout_for(cfg.objective)).label_accuracy
        if acc >= accuracy_floor:
            kept.append(m)
        else:
            excluded.append({"member": j, "label_accuracy": acc})
    if not kept:
        raise RuntimeError(f"no ensemble member reached label accuracy {accuracy_floor}")
    ens = Ensemble(kept, excluded, trajectory=result.trajectory)
    H = ens.entropy(ds.X).mean(axis=0)
    ens.slot_entropy = {name: float(h) for name, h in zip(ds.task.concepts.names, H)}
    return ens


def select_queries(ensemble: Ensemble, ds: Dataset, budget: int, exclude=None) -> list[tuple[int, int]]:
    """``budget`` (example, slot) pairs with the highest ensemble entropy.

    Ties are broken lexicographically on (example, slot).  Pairs in
    ``exclude`` (a boolean ``(N, k)`` mask) are never returned.
    """
    if budget <= 0:
        raise ValueError(f"query budget must be > 0, got {budget}")
    H = ensemble.entropy(ds.X)
    if exclude is not None:
        H = np.where(exclude, -np.inf, H)
    flat = H.ravel()
    # lexsort: last key is primary; stable ordering on flat index breaks ties
    order = np.lexsort((np.arange(flat.size), -flat))
    order = [o for o in order if np.isfinite(flat[o])][:budget]
    k = H.shape[1]
    return [(int(o // k), int(o % k)) for o in order]


def random_queries(ds: Dataset, budget: int, rng: np.random.Generator, exclude=None) -> list[tuple[int, int]]:
    if budget <= 0:
        raise ValueError(f"query budget must be > 0, got {budget}")
    n, k = ds.G.shape
    free = np.flatnonzero(~exclude.ravel()) if exclude is not None else np.arange(n * k)
    pick = rng.choice(free, size=min(budget, free.size), replace=False)
    return [(int(o // k), int(o % k)) for o in sorted(pick)]


@dataclass
class QueryRun:
    strategy: str
    concept_accuracy: list
    queried: int


def query_experiment(make_model, ds: Dataset, cfg: TrainConfig, strategy: str, rounds: int, budget: int,
                     seed: int = 0, size: int = 4, diversity: float = 1.0,
                     table: InferenceTable | None = None) -> QueryRun:
    """Alternate ensemble training and concept queries for ``rounds`` rounds.

    ``strategy`` is ``"active"`` (highest ensemble entropy) or ``"random"``.
    Queried (example, slot) pairs become concept supervision in later
    rounds.  Returns the mean member concept accuracy after each round
    (round 0 has no queries).
    """
    if strategy not in ("active", "random"):
        raise ValueError(f"unknown query strategy {strategy!r}")
    table = table or build_beta_star(ds.task)
    rng = np.random.default_rng(seed)
    mask = np.zeros(ds.G.shape, dtype=bool)
    history = []
    for r in range(rounds + 1):
        rc = replace(cfg, seed=seed * 1000 + r, supervision_mask=mask.copy(), supervision=0.0)
        ens = train_bears_ensemble(lambda j: make_model(seed * 100 + r * 16 + j), ds, rc, size, diversity,
                                   accuracy_floor=0.0, table=table)
        accs = [evaluate(m, ds, table).concept_accuracy for m in ens.members]
        history.append(float(np.mean(accs)))
        if r == rounds:
            break
        if strategy == "active":
            picks = select_queries(ens, ds, budget, exclude=mask)
        else:
            picks = random_queries(ds, budget, rng, exclude=mask)
        for i, s in picks:
            mask[i, s] = True
    return QueryRun(strategy, history, int(mask.sum()))
