import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracle
from rslab import corpus
from rslab.analysis import (
    BudgetExceeded, ConceptRemap, EmpiricalRemap, IdentityExcluded, KnowledgeWarning, PartialRemap,
    RemapFamily, StochasticRemap, collapse_metric, count_rss, count_rss_bruteforce, count_rss_sat, diagnose,
    enumerate_rss, family_size, is_rs, knowledge_complexity, label_preserving_fraction, mix_remaps, remap_collapse, rs_risk,
    verify_mixture_is_rs,
)
from rslab.logic import TaskError, build_beta_star, parse_task
from rslab.mitigation import transform_support

KNOWN_RS = ConceptRemap.sharedslot({2: 4, 3: 1, 4: 3, 5: 6})
SHAPES = ("fulltable", "perslot", "sharedslot")


def applicable(task, shape):
    return shape != "sharedslot" or len(set(task.concepts.cards)) == 1


def test_is_rs_mnist(load):
    t = load("mnist_toy")
    table = build_beta_star(t)
    assert is_rs(KNOWN_RS, table, t.support)
    assert not is_rs(ConceptRemap.identity(t.support), table, t.support)
    ext = load("mnist_toy_extended")
    assert not is_rs(KNOWN_RS, build_beta_star(ext), ext.support)
    with pytest.raises(PartialRemap):
        is_rs(ConceptRemap.sharedslot({2: 4, 3: 1}), table, t.support)


@pytest.mark.parametrize("name,shape,expected", [
    ("xor", "sharedslot", 1),
    ("sum2bit", "sharedslot", 0),
    ("boia2", "fulltable", 26),
])
def test_counts_match_oracle(name, shape, expected, load):
    t = load(name)
    fam = RemapFamily(shape)
    assert oracle.count(t, shape) == expected
    assert count_rss_bruteforce(t, fam) == expected
    assert count_rss_sat(t, fam) == expected


def test_boia_injective_is_five(load):
    t = load("boia2")
    fam = RemapFamily(injective=True)
    assert oracle.count(t, "fulltable", injective=True) == 5
    assert count_rss_bruteforce(t, fam) == count_rss_sat(t, fam) == 5


def test_enumeration_examples(load):
    xor = load("xor")
    e = enumerate_rss(xor, RemapFamily("sharedslot"))
    assert e.total == 1 and e.remaps == [ConceptRemap.sharedslot({0: 1, 1: 0})]
    m = enumerate_rss(load("mnist_toy"), RemapFamily("sharedslot"), cap=100)
    assert KNOWN_RS in m.remaps and m.total == 59
    assert enumerate_rss(load("sum2bit"), RemapFamily("sharedslot")).remaps == []
    assert enumerate_rss(load("boia2"), cap=0).remaps == []


@pytest.mark.parametrize("name", corpus.names())
def test_sat_matches_oracle_on_corpus(name, load):
    t = load(name)
    for shape in SHAPES:
        if not applicable(t, shape):
            continue
        fam = RemapFamily(shape)
        n = family_size(t, fam)
        assert n == oracle.size(t, shape)
        sat = count_rss_sat(t, fam)
        if n <= 1 << 16:
            assert sat == count_rss_bruteforce(t, fam)
        if n <= 1 << 12:
            assert sat == oracle.count(t, shape)


def test_threads_do_not_change_results(load):
    t = load("boia3_literal")
    for shape in ("fulltable", "perslot"):
        fam = RemapFamily(shape)
        assert count_rss_sat(t, fam, threads=3) == count_rss_sat(t, fam)
    fam = RemapFamily(injective=True)
    assert count_rss_bruteforce(t, fam, threads=4) == count_rss_bruteforce(t, fam)
    a = enumerate_rss(t, fam, cap=7, threads=4)
    b = enumerate_rss(t, fam, cap=7)
    assert a == b


def test_budget(load):
    t = load("mnist_toy")
    with pytest.raises(BudgetExceeded, match="SAT"):
        count_rss_bruteforce(t, RemapFamily("sharedslot"), budget=10)
    assert count_rss(t, RemapFamily("sharedslot"), budget=10, with_method=True) == (59, "sat")


def test_family_must_keep_identity():
    with pytest.raises(TaskError):
        RemapFamily(forbidden=[((0, 0), (0, 0))])


def test_pins_and_forbidden_match_oracle(load):
    t = load("boia2")
    fam = RemapFamily(pins=[(0, 1)], forbidden=[((1, 0), (1, 1))])
    expect = oracle.count(t, "fulltable", pins=[(0, 1)], forbidden=[((1, 0), (1, 1))])
    assert count_rss_bruteforce(t, fam) == count_rss_sat(t, fam) == expect
    every = RemapFamily().with_pins(t.support)
    assert count_rss_sat(t, every) == count_rss_bruteforce(t, every) == 0


@pytest.mark.parametrize("name", ["boia2", "xor", "boia3_literal", "and2"])
def test_enumerated_remaps_preserve_labels(name, load):
    t = load(name)
    table = build_beta_star(t)
    for r in enumerate_rss(t, RemapFamily(), cap=1000).remaps:
        for g in t.support:
            assert table.label_of(r.apply(g)) == table.label_of(g)
        assert not r.is_identity_on(t.support)


def _random_chain(task, rng):
    vecs = list(task.support)
    order = rng.permutation(len(vecs))
    return [vecs[i] for i in order]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), name=st.sampled_from(["boia2", "xor", "sum2bit", "implication", "or2", "boia3_literal"]),
       shape=st.sampled_from(SHAPES))
def test_support_monotonicity(seed, name, shape):
    t = corpus.load(name)
    chain = _random_chain(t, np.random.default_rng(seed))
    fam = RemapFamily(shape)
    prev = None
    for k in range(1, len(chain) + 1):
        sub = transform_support(t, chain[:k], "set")
        frac = label_preserving_fraction(sub, fam)
        if oracle.size(sub, shape) <= 4096:
            assert frac == pytest.approx((oracle.count(sub, shape) + 1) / oracle.size(sub, shape))
        if prev is not None:
            assert frac <= prev + 1e-15
        prev = frac


def test_knowledge_monotonicity(load):
    from rslab.mitigation import merge_multitask
    a = load("boia3_literal")
    b = parse_task("task b2;\nconcept green : 2;\nconcept red : 2;\nconcept ped : 2;\nlabel r : 2;\n"
                   "support { (0,0,1); (0,1,0); (0,1,1); (1,0,0); (1,0,1); (1,1,0); (1,1,1); }\n"
                   "knowledge { r <-> red }\n")
    for fam in (RemapFamily(), RemapFamily("perslot")):
        assert count_rss_sat(merge_multitask([a, b]), fam) <= count_rss_sat(a, fam)


def test_knowledge_complexity(load):
    t = load("boia3_gostop")
    assert knowledge_complexity(t, [0.5, 0.5]) == 4.0
    assert knowledge_complexity(t, [0.5, 0.5]) <= t.concepts.size - 1
    bij = parse_task("task b;\nconcept A : 4;\nlabel Y : 4;\nknowledge { Y == A }\n")
    for q in ([0.25] * 4, [1, 0, 0, 0], [0.1, 0.2, 0.3, 0.4]):
        assert knowledge_complexity(bij, q) == pytest.approx(3.0)
    taut = parse_task("task t;\nconcept A : 2;\nlabel Y : 2;\nknowledge { (Y = 0) | (Y = 1) | A }\n")
    assert knowledge_complexity(taut, [1.0, 0.0], table=build_beta_star(taut, deterministic=False)) == 0.0


def test_knowledge_complexity_warning():
    t = parse_task("task z;\nconcept A : 2;\nlabel Y : 3;\nknowledge { Y == A }\n")
    with pytest.warns(KnowledgeWarning):
        knowledge_complexity(t, [0.25, 0.25, 0.5])


def test_rs_risk_and_collapse():
    assert rs_risk(1.5, 1.5) == 0.0
    assert rs_risk(float("inf"), 0.0) == float("inf")
    assert rs_risk(0.2, 0.7) < 0
    assert collapse_metric(np.eye(4)) == 0.0
    one = np.zeros((4, 4))
    one[:, 2] = 1
    assert collapse_metric(one) == 0.75
    two = np.zeros((4, 4))
    two[:2, 0] = two[2:, 3] = 1
    assert collapse_metric(two) == 0.5
    with pytest.raises(ValueError):
        collapse_metric(np.zeros((3, 3)))


def test_mixtures(load):
    t = load("boia2")
    table = build_beta_star(t)
    rss = enumerate_rss(t, cap=100).remaps
    single = mix_remaps([rss[0]], [1.0], t.concepts, t.support)
    assert single.deterministic
    half = mix_remaps(rss[:2], [0.5, 0.5], t.concepts, t.support)
    assert not half.deterministic
    assert verify_mixture_is_rs(half, table)
    with pytest.raises(ValueError):
        mix_remaps([], [], t.concepts, t.support)
    with pytest.raises(ValueError):
        mix_remaps(rss[:2], [0.5, 0.6], t.concepts, t.support)
    bad = ConceptRemap.fulltable({g: (0, 0) for g in t.support})
    v = verify_mixture_is_rs(mix_remaps([rss[0], bad], [0.5, 0.5], t.concepts, t.support), table)
    assert not v and v.max_tv > 0
    ident = verify_mixture_is_rs(mix_remaps([ConceptRemap.identity(t.support)], [1.0], t.concepts, t.support), table)
    assert ident.label_preserving and not ident.nontrivial


def test_split_mixture_with_identity(load):
    t = load("boia2")
    # swap red and ped on the stop vectors, mixed half and half with the identity
    swap = ConceptRemap.fulltable({(0, 0): (0, 0), (0, 1): (1, 0), (1, 0): (0, 1), (1, 1): (1, 1)})
    mix = mix_remaps([ConceptRemap.identity(t.support), swap], [0.5, 0.5], t.concepts, t.support)
    row = mix.row((0, 1))
    assert row[t.concepts.index((0, 1))] == 0.5 and row[t.concepts.index((1, 0))] == 0.5
    assert verify_mixture_is_rs(mix, build_beta_star(t)).nontrivial


def test_empirical_remap_verdict(load):
    t = load("xor")
    table = build_beta_star(t)
    flip = np.zeros((4, 4))
    for j, g in enumerate(t.support):
        flip[j, t.concepts.index((1 - g[0], 1 - g[1]))] = 1.0
    v = verify_mixture_is_rs(EmpiricalRemap(t.concepts, t.support, flip), table)
    assert v.label_preserving and v.nontrivial


def test_remap_collapse(load):
    t = load("boia2")
    const = ConceptRemap.fulltable({g: (1, 1) for g in t.support})
    assert remap_collapse(const, t.support) == 0.75


def test_diagnose(load):
    r = diagnose(load("boia2"))
    assert r.rs_count == 26 and r.knowledge_complexity == 2.0
    assert r.k_unambiguity["applicable"]
    out = r.to_json()
    assert out["family_size"] == "256" and len(out["remaps"]) == 20
    assert diagnose(load("boia2"), method="brute").rs_count == 26
    x = diagnose(load("xor"), RemapFamily("sharedslot"))
    assert x.rs_count == 1 and x.k_unambiguity["witness"] == [0, 1]


def test_identity_excluded_type():
    assert issubclass(IdentityExcluded, ValueError)
    assert isinstance(StochasticRemap, type)
