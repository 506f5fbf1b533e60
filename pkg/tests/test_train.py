import math

import numpy as np
import pytest

from rslab.analysis import ConceptRemap, verify_mixture_is_rs
from rslab.inference import ConceptDistribution, pnsp_label_dist
from rslab.logic import build_beta_star
from rslab.train import (
    ConstantExtractor, Divergence, Extractor, OracleExtractor, SyntheticTaskConfig, TrainConfig, Unsupported,
    estimate_alpha, evaluate, generate_dataset, load_dataset, objective_grads, query_experiment, save_dataset,
    select_queries, supervision_mask, train, train_bears_ensemble,
)
from rslab.train.loop import Batch

FLIP = ConceptRemap.sharedslot({0: 1, 1: 0})


def dataset(task, render="blockwise", noise=0.0, n=10, seed=0):
    return generate_dataset(SyntheticTaskConfig(task, render, noise, n, seed))


# --- data ---------------------------------------------------------------

def test_dataset_shape_and_labels(load):
    t = load("boia2")
    ds = dataset(t, n=7)
    assert len(ds) == 28
    for g in t.support:
        assert (ds.G == g).all(axis=1).sum() == 7
    table = build_beta_star(t)
    assert [table.label_of(g) for g in ds.G] == [tuple(y) for y in ds.Y]


def test_dataset_deterministic(load):
    t = load("xor")
    a = dataset(t, "entangled", 0.1, seed=3)
    b = dataset(t, "entangled", 0.1, seed=3)
    assert a.X.tobytes() == b.X.tobytes() and a.digest() == b.digest()
    assert dataset(t, "entangled", 0.1, seed=4).digest() != a.digest()


def test_noise_rate_bound(load):
    with pytest.raises(ValueError):
        SyntheticTaskConfig(load("xor"), noise_rate=0.5)


def test_blockwise_separable_per_slot(load):
    ds = dataset(load("boia3_literal"))
    for i, block in enumerate(ds.blocks):
        assert np.array_equal(ds.X[:, list(block)].argmax(axis=1), ds.G[:, i])


def _probe_accuracy(X, y):
    """Least-squares one-vs-rest linear probe, scored on its training data."""
    A = np.hstack([X, np.ones((len(X), 1))])
    T = np.eye(y.max() + 1)[y]
    W = np.linalg.lstsq(A, T, rcond=None)[0]
    return float(((A @ W).argmax(axis=1) == y).mean())


def test_entangled_render_breaks_blockwise_probe(load):
    t = load("sum2bit")
    for render, expect_drop in (("blockwise", False), ("entangled", True)):
        ds = dataset(t, render, 0.2, n=50, seed=1)
        per_slot = np.mean([_probe_accuracy(ds.X[:, list(b)], ds.G[:, i]) for i, b in enumerate(ds.blocks)])
        joint = np.mean([_probe_accuracy(ds.X, ds.G[:, i]) for i in range(ds.G.shape[1])])
        assert (per_slot < joint - 0.05) == expect_drop


def test_save_load_roundtrip(tmp_path, load):
    ds = dataset(load("boia2"), "entangled", 0.1, n=3)
    side = save_dataset(ds, str(tmp_path / "d.csv"))
    assert side.endswith(".json")
    back = load_dataset(str(tmp_path / "d.csv"))
    assert back.digest() == ds.digest()
    assert np.array_equal(back.y_index, ds.y_index)


# --- evaluation ---------------------------------------------------------------

def test_evaluate_reference_extractors(load):
    t = load("xor")
    ds = dataset(t)
    perfect = evaluate(OracleExtractor(ds.renderer), ds)
    assert perfect.concept_accuracy == 1.0 and perfect.collapse == 0.0 and perfect.rs_risk <= 0
    flip = evaluate(OracleExtractor(ds.renderer, FLIP), ds)
    assert flip.label_accuracy == 1.0 and flip.concept_accuracy == 0.0 and flip.rs_risk > 0
    uni = evaluate(ConstantExtractor([[0.5, 0.5], [0.5, 0.5]]), ds)
    assert uni.label_nll == pytest.approx(math.log(2))
    assert flip.to_json()["rs_risk"] == "inf"


def test_evaluate_collapse_and_empty(load):
    t = load("boia2")
    ds = dataset(t)
    const = evaluate(ConstantExtractor([[0.1, 0.9], [0.2, 0.8]]), ds)
    assert const.collapse == 0.75
    empty = ds.__class__(ds.X[:0], ds.G[:0], ds.Y[:0], ds.y_index[:0], t, ds.renderer)
    with pytest.raises(ValueError):
        evaluate(ConstantExtractor([[0.5, 0.5], [0.5, 0.5]]), empty)


def test_estimate_alpha(load):
    t = load("xor")
    ds = dataset(t)
    ident = estimate_alpha(OracleExtractor(ds.renderer), ds).rows()
    assert np.array_equal(ident, np.eye(4))
    flip = estimate_alpha(OracleExtractor(ds.renderer, FLIP), ds)
    assert flip.argmax_remap() == ConceptRemap.fulltable({g: (1 - g[0], 1 - g[1]) for g in t.support})
    assert verify_mixture_is_rs(flip, build_beta_star(t)).nontrivial
    part = ds.__class__(ds.X[:10], ds.G[:10], ds.Y[:10], ds.y_index[:10], t, ds.renderer)
    with pytest.raises(ValueError, match="does not occur"):
        estimate_alpha(OracleExtractor(ds.renderer), part)


def test_estimate_alpha_matches_average(load):
    t = load("boia2")
    ds = dataset(t, noise=0.2, n=40, seed=2)
    m = Extractor.for_dataset(ds, seed=5)
    alpha = estimate_alpha(m, ds)
    probs = m.predict(ds.X)
    for j, g in enumerate(t.support):
        rows = np.flatnonzero((ds.G == g).all(axis=1))
        mean = np.mean([np.outer(probs[0][r], probs[1][r]).ravel() for r in rows], axis=0)
        np.testing.assert_allclose(alpha.rows()[j], mean, atol=0.05)


# --- training -----------------------------------------------------------------

@pytest.mark.parametrize("objective,kw", [("pnsp", {}), ("sl", {"label_dim": 2}), ("ltn", {}), ("abl", {})])
def test_xor_objectives_fit_labels(objective, kw, load):
    ds = dataset(load("xor"))
    m = Extractor.for_dataset(ds, seed=0, **kw)
    res = train(m, ds, TrainConfig(objective))
    from rslab.train import readout_for
    assert res.epochs_run <= 500
    assert evaluate(m, ds, mode=readout_for(objective)).label_accuracy >= 0.99


def test_full_supervision_recovers_concepts(load):
    ds = dataset(load("xor"), "entangled")
    m = Extractor.for_dataset(ds, seed=0)
    train(m, ds, TrainConfig(supervision=1.0))
    assert evaluate(m, ds).concept_accuracy >= 0.99


@pytest.mark.parametrize("noise,seed", [(0.0, 0), (0.0, 2), (0.1, 1)])
def test_entropy_regulariser_raises_entropy(load, noise, seed):
    ds = dataset(load("boia2"), noise=noise, seed=seed)
    runs = []
    for w in (0.0, 0.5):
        m = Extractor.for_dataset(ds, seed=seed)
        train(m, ds, TrainConfig(epochs=200, seed=seed, entropy=w))
        runs.append(evaluate(m, ds).marginal_concept_entropy)
    assert runs[1] > runs[0]


def test_trajectory_deterministic_and_threshold(load):
    ds = dataset(load("xor"), noise=0.1)
    cfg = TrainConfig(epochs=40, batch_size=7, seed=4, log_every=5)
    a = train(Extractor.for_dataset(ds, seed=4), ds, cfg).trajectory
    b = train(Extractor.for_dataset(ds, seed=4), ds, cfg).trajectory
    assert a == b and [e["epoch"] for e in a] == [5, 10, 15, 20, 25, 30, 35, 40]
    clean = dataset(load("xor"))
    res = train(Extractor.for_dataset(clean, seed=0), clean, TrainConfig(lr=2.0, epochs=3000))
    assert res.converged and res.trajectory[-1]["label_nll"][0] < 1e-3


def test_divergence(load):
    ds = dataset(load("xor"), n=5)
    with pytest.raises(Divergence) as exc:
        train(Extractor.for_dataset(ds, seed=0), ds, TrainConfig(lr=1e9, epochs=50))
    assert exc.value.diagnostics["objective"] == "pnsp"


def test_unsupported_configurations(load):
    ds = dataset(load("mnist_toy"), n=2)
    with pytest.raises(Unsupported):
        train(Extractor.for_dataset(ds, seed=0), ds, TrainConfig("ltn"))
    ent = dataset(load("xor"), "entangled")
    with pytest.raises(Unsupported):
        train(Extractor.for_dataset(ent, seed=0, recon_dim=4), ent, TrainConfig(reconstruction=0.1))
    with pytest.raises(Unsupported):
        Extractor.for_dataset(ent, head_mode="perslot")
    with pytest.raises(ValueError):
        TrainConfig("sl", mu=0.0)


def test_mixture_awareness_after_convergence(load):
    t = load("xor")
    ds = dataset(t)
    m = Extractor.for_dataset(ds, seed=0)
    res = train(m, ds, TrainConfig(lr=2.0, epochs=3000))
    assert res.converged
    table = build_beta_star(t)
    alpha = estimate_alpha(m, ds)
    for g, row in zip(t.support, alpha.rows()):
        d = pnsp_label_dist(ConceptDistribution(t.concepts, table=row), table)
        assert 1.0 - d.prob(table.label_of(g)) <= 0.02


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("name,cfg,kw", [
    ("xor", TrainConfig("pnsp"), {}),
    ("xor", TrainConfig("sl", mu=0.7), {"label_dim": 2}),
    ("boia3_literal", TrainConfig("ltn"), {}),
    ("boia2", TrainConfig("abl"), {}),
    ("xor", TrainConfig(entropy=0.3, tau=2.0, supervision=0.5, reconstruction=0.4, contrastive=0.2), {"recon_dim": 4}),
    ("sum2bit", TrainConfig(entropy=0.3), {"head_mode": "perslot", "shared": True}),
    ("bdd_like", TrainConfig(entropy=0.3), {"groups": [(0,), (1, 2)]}),
    ("mnist_toy", TrainConfig(), {"head_mode": "perslot", "shared": True}),
])
def test_end_to_end_gradients(name, cfg, kw, load):
    t = load(name)
    ds = dataset(t, noise=0.1, n=3, seed=1)
    table = build_beta_star(t)
    m = Extractor.for_dataset(ds, seed=3, hidden=5, **kw)
    m.temperature = cfg.tau
    mask = supervision_mask(cfg, len(ds), ds.G.shape[1])
    pos = ds.renderer(ds.G, np.random.default_rng(5)) if cfg.contrastive else None
    batch = Batch(ds.X, ds.G, ds.y_index, mask, pos)
    _, grads, _ = objective_grads(m, batch, cfg, table, t.knowledge)
    v = m.flat()
    num = np.zeros_like(v)
    h = 1e-5
    for i in range(v.size):
        for s in (1, -1):
            w = v.copy()
            w[i] += s * h
            m.set_flat(w)
            num[i] += s * objective_grads(m, batch, cfg, table, t.knowledge)[0] / (2 * h)
    m.set_flat(v)
    assert _rel(m.flat_grads(grads), num) < 1e-5


# --- ensembles and queries ------------------------------------------------------

def test_ensemble_size_bounds(load):
    ds = dataset(load("xor"), n=2)
    with pytest.raises(ValueError):
        train_bears_ensemble(lambda j: Extractor.for_dataset(ds, seed=j), ds, TrainConfig(epochs=1), size=1)


def test_zero_rs_ensemble_agrees(load):
    ds = dataset(load("sum2bit"))
    ens = train_bears_ensemble(lambda j: Extractor.for_dataset(ds, head_mode="perslot", shared=True, seed=j), ds,
                               TrainConfig(epochs=300, entropy=0.1), size=5, diversity=1.0)
    assert not ens.excluded
    assert max(ens.slot_entropy.values()) <= 0.1


def test_accuracy_floor_excludes_members(load):
    ds = dataset(load("xor"), n=4)
    make = lambda j: Extractor.for_dataset(ds, seed=j)
    cfg = TrainConfig(epochs=1)
    ens = train_bears_ensemble(make, ds, cfg, size=4, accuracy_floor=0.0)
    assert len(ens.members) == 4 and ens.excluded == []
    accs = [evaluate(m, ds).label_accuracy for m in ens.members]
    floor = max(accs)
    ens = train_bears_ensemble(make, ds, cfg, size=4, accuracy_floor=floor)
    assert len(ens.members) == sum(a >= floor for a in accs)
    assert sorted(e["member"] for e in ens.excluded) == [j for j, a in enumerate(accs) if a < floor]
    with pytest.raises(RuntimeError):
        train_bears_ensemble(make, ds, cfg, size=2, accuracy_floor=1.01)


@pytest.fixture(scope="module")
def bdd_ensemble(load):
    ds = dataset(load("bdd_like"))
    ens = train_bears_ensemble(lambda j: Extractor.for_dataset(ds, groups=[(0,), (1, 2)], seed=j), ds,
                               TrainConfig(epochs=300, entropy=0.1), size=5, diversity=1.0)
    return ds, ens


def test_select_queries(bdd_ensemble):
    ds, ens = bdd_ensemble
    with pytest.raises(ValueError):
        select_queries(ens, ds, 0)
    picks = select_queries(ens, ds, 10)
    assert len(picks) == 10
    slots = [s for _, s in picks]
    assert all(s in (1, 2) for s in slots)
    H = ens.entropy(ds.X)
    vals = [H[i, s] for i, s in picks]
    assert vals == sorted(vals, reverse=True)
    # ties are ordered lexicographically
    for (a, b), (c, d), va, vc in zip(picks, picks[1:], vals, vals[1:]):
        if va == vc:
            assert (a, b) < (c, d)
    mask = np.zeros(ds.G.shape, dtype=bool)
    mask[picks[0]] = True
    assert picks[0] not in select_queries(ens, ds, 10, exclude=mask)


def test_query_experiment_shapes(load):
    ds = dataset(load("bdd_like"), n=4)
    run = query_experiment(lambda s: Extractor.for_dataset(ds, groups=[(0,), (1, 2)], seed=s), ds,
                           TrainConfig(epochs=20), "active", rounds=2, budget=3, size=2)
    assert len(run.concept_accuracy) == 3 and run.queried == 6
    with pytest.raises(ValueError):
        query_experiment(None, ds, TrainConfig(epochs=1), "greedy", 1, 1)
