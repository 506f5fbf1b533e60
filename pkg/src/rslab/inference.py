"""Inference layers: probabilistic (PNSP), Semantic Loss, product-logic fuzzy
(LTN) and abduction (ABL), with exact gradients w.r.t. concept logits.

All sums over concept vectors are computed by explicit enumeration of the
concept space, which is exact at the sizes this package targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .logic.formula import And, Atom, Const, Formula, Iff, Implies, Not, Or, Xor, fold
from .logic.spaces import Space, TaskError
from .logic.task import InferenceTable

NORM_TOL = 1e-9


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    m = np.max(z, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(z - m)
    return e / e.sum(axis=axis, keepdims=True)


def _check_simplex(p: np.ndarray, what: str) -> None:
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{what} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > NORM_TOL:
        raise ValueError(f"{what} sums to {p.sum()!r}, not 1")


class ConceptDistribution:
    """A point in the concept simplex, either factorised per slot or tabular."""

    def __init__(self, space: Space, factors=None, table=None, temperature: float | None = None):
        if (factors is None) == (table is None):
            raise ValueError("give exactly one of factors or table")
        self.space = space
        self.temperature = temperature
        if factors is not None:
            factors = [np.asarray(f, dtype=float) for f in factors]
            if len(factors) != len(space):
                raise ValueError(f"expected {len(space)} factors, got {len(factors)}")
            for i, (f, card) in enumerate(zip(factors, space.cards)):
                if f.shape != (card,):
                    raise ValueError(f"factor {i} has shape {f.shape}, expected ({card},)")
                _check_simplex(f, f"factor {i}")
            self.factors = factors
            self._table = None
        else:
            table = np.asarray(table, dtype=float).reshape(-1)
            if table.shape != (space.size,):
                raise ValueError(f"table has {table.size} entries, expected {space.size}")
            _check_simplex(table, "concept table")
            self.factors = None
            self._table = table

    @classmethod
    def from_logits(cls, space: Space, logits, temperature: float = 1.0) -> "ConceptDistribution":
        if isinstance(logits, np.ndarray) and logits.ndim == 1 and len(space) != 1 and logits.size == space.size:
            return cls(space, table=softmax(logits / temperature), temperature=temperature)
        return cls(space, factors=[softmax(np.asarray(z) / temperature) for z in logits], temperature=temperature)

    @classmethod
    def one_hot(cls, space: Space, vector) -> "ConceptDistribution":
        factors = []
        for v, card in zip(vector, space.cards):
            f = np.zeros(card)
            f[v] = 1.0
            factors.append(f)
        return cls(space, factors=factors)

    @classmethod
    def uniform(cls, space: Space) -> "ConceptDistribution":
        return cls(space, factors=[np.full(c, 1.0 / c) for c in space.cards])

    @property
    def factorized(self) -> bool:
        return self.factors is not None

    def table(self) -> np.ndarray:
        """Joint probabilities over the concept space in canonical order."""
        if self._table is None:
            joint = np.ones(())
            for f in self.factors:
                joint = np.multiply.outer(joint, f)
            self._table = joint.reshape(-1)
        return self._table

    def marginals(self) -> list[np.ndarray]:
        if self.factors is not None:
            return self.factors
        t = self.table().reshape(self.space.cards)
        k = len(self.space)
        return [t.sum(axis=tuple(j for j in range(k) if j != i)) for i in range(k)]

    def argmax(self) -> tuple[int, ...]:
        """Most probable concept vector; ties go to the lexicographically first."""
        return self.space.vector(int(np.argmax(self.table())))


@dataclass(frozen=True)
class LabelDistribution:
    space: Space
    probs: np.ndarray

    def __post_init__(self):
        _check_simplex(self.probs, "label distribution")

    def prob(self, y) -> float:
        return float(self.probs[self.space.index(y)])

    def argmax(self) -> tuple[int, ...]:
        return self.space.vector(int(np.argmax(self.probs)))


class ZeroMass(ValueError):
    """No label is reachable from the positive-mass concept vectors."""


def label_weights(table: InferenceTable) -> np.ndarray:
    """Row-stochastic ``(|C|, |Y|)`` map; multi-valued rows split uniformly.

    Rows of concept vectors without any consistent label stay all-zero, so
    their mass is dropped and absorbed by normalisation.
    """
    w = table.consistent.astype(float)
    counts = w.sum(axis=1, keepdims=True)
    return np.divide(w, counts, out=np.zeros_like(w), where=counts > 0)


def pnsp_label_dist(p: ConceptDistribution, table: InferenceTable) -> LabelDistribution:
    """Label distribution of a probabilistic NeSy predictor."""
    mass = p.table() @ label_weights(table)
    total = mass.sum()
    if total <= 0:
        raise ZeroMass("no consistent label carries any probability mass")
    return LabelDistribution(table.labels, mass / total)


def sl_label_dist(p: ConceptDistribution, table: InferenceTable) -> LabelDistribution:
    """Normalised consistent mass per label, i.e. ``exp(-SL)`` renormalised."""
    mass = p.table() @ table.consistent.astype(float)
    total = mass.sum()
    if total <= 0:
        raise ZeroMass("no consistent label carries any probability mass")
    return LabelDistribution(table.labels, mass / total)


def _marginal_grads(space: Space, factors: Sequence[np.ndarray], weights: np.ndarray):
    """Per-slot ``E_r[1{c_i = v}]`` under ``r(c) ∝ weights(c) p(c)``."""
    joint = np.ones(())
    for f in factors:
        joint = np.multiply.outer(joint, f)
    post = joint.reshape(-1) * weights
    mass = post.sum()
    post = (post / mass).reshape(space.cards)
    k = len(space)
    return mass, [post.sum(axis=tuple(j for j in range(k) if j != i)) for i in range(k)]


def _as_factor_logits(space: Space, logits):
    if isinstance(logits, np.ndarray) and logits.ndim == 1 and logits.size == space.size and len(space) != 1:
        return None, np.asarray(logits, dtype=float)
    return [np.asarray(z, dtype=float) for z in logits], None


def _consistent_mass_and_grad(space, logits, weights):
    """``-log sum_c weights(c) p(c)`` and its gradient w.r.t. the logits."""
    factor_logits, joint_logits = _as_factor_logits(space, logits)
    if joint_logits is not None:
        p = softmax(joint_logits)
        mass = float(p @ weights)
        if mass <= 0:
            return math.inf, None
        post = p * weights / mass
        return -math.log(mass), p - post
    factors = [softmax(z) for z in factor_logits]
    joint = np.ones(())
    for f in factors:
        joint = np.multiply.outer(joint, f)
    if float(joint.reshape(-1) @ weights) <= 0:
        return math.inf, None
    mass, marg = _marginal_grads(space, factors, weights)
    return -math.log(mass), [f - m for f, m in zip(factors, marg)]


def pnsp_nll_and_grad(logits, y, table: InferenceTable):
    """Negative log-likelihood ``-log P(y)`` of a PNSP and its logit gradient.

    ``logits`` is either a list of per-slot vectors (factorised extractor) or a
    single vector over the whole concept space.  Returns ``(loss, grad)`` with
    ``grad`` shaped like ``logits``; when ``P(y) = 0`` the result is
    ``(math.inf, None)``.
    """
    W = label_weights(table)
    yi = table.labels.index(y)
    loss_y, grad_y = _consistent_mass_and_grad(table.concepts, logits, W[:, yi])
    if grad_y is None:
        return math.inf, None
    reach = W.sum(axis=1)
    if np.all(reach == 1.0):
        return loss_y, grad_y
    # normaliser over labels: log sum_c p(c) [c has some consistent label]
    loss_z, grad_z = _consistent_mass_and_grad(table.concepts, logits, reach)
    if isinstance(grad_y, list):
        return loss_y - loss_z, [a - b for a, b in zip(grad_y, grad_z)]
    return loss_y - loss_z, grad_y - grad_z


def semantic_loss(p: ConceptDistribution, y, table: InferenceTable) -> float:
    """``-log`` of the concept mass consistent with ``y``; ``inf`` if there is none."""
    mass = float(p.table() @ table.consistent[:, table.labels.index(y)])
    return -math.log(mass) if mass > 0 else math.inf


def semantic_loss_and_grad(logits, y, table: InferenceTable):
    return _consistent_mass_and_grad(table.concepts, logits, table.consistent[:, table.labels.index(y)].astype(float))


def sl_joint_objective(concept_logits, label_logits, ys, mu: float, table: InferenceTable):
    """Mean over a batch of label-head cross-entropy plus ``mu`` times the SL.

    ``concept_logits`` is a list (one entry per example) of per-slot logit
    lists, ``label_logits`` an ``(n, |Y|)`` array and ``ys`` the label vectors.
    Returns ``(loss, concept_grads, label_grads)``.
    """
    if not mu > 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    label_logits = np.asarray(label_logits, dtype=float)
    n = len(ys)
    if n == 0:
        raise ValueError("empty batch")
    total = 0.0
    c_grads, l_grads = [], np.zeros_like(label_logits)
    for i, y in enumerate(ys):
        yi = table.labels.index(y)
        q = softmax(label_logits[i])
        ce = -math.log(q[yi]) if q[yi] > 0 else math.inf
        l_grads[i] = q / n
        l_grads[i, yi] -= 1.0 / n
        sl, g = semantic_loss_and_grad(concept_logits[i], y, table)
        total += ce + mu * sl
        if g is None:
            c_grads.append(None)
        elif isinstance(g, list):
            c_grads.append([mu * gi / n for gi in g])
        else:
            c_grads.append(mu * g / n)
    return total / n, c_grads, l_grads


# --- batched versions used by the trainer --------------------------------

def slot_indicators(space: Space) -> list[np.ndarray]:
    """One ``(|C|, card_i)`` 0/1 matrix per slot, mapping vectors to slot values."""
    vecs = space.vectors
    return [np.eye(card)[vecs[:, i]] for i, card in enumerate(space.cards)]


def joint_from_factors(probs) -> np.ndarray:
    """``(N, |C|)`` product table from per-slot ``(N, card_i)`` probabilities."""
    out = probs[0]
    for p in probs[1:]:
        out = (out[:, :, None] * p[:, None, :]).reshape(out.shape[0], -1)
    return out


def _batch_mass_nll(probs, weights, onehots):
    """``-log sum_c w_n(c) p_n(c)`` per example and logit gradients."""
    joint = joint_from_factors(probs)
    post = joint * weights
    mass = post.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        loss = -np.log(mass)
        post = post / mass[:, None]
    return loss, [p - post @ oh for p, oh in zip(probs, onehots)]


def batch_pnsp_nll(probs, y_index, table: InferenceTable):
    """Vectorised :func:`pnsp_nll_and_grad` for per-slot softmax outputs.

    Returns per-example losses ``(N,)`` and one ``(N, card_i)`` gradient per
    slot w.r.t. that slot's logits.  Rows with ``P(y) = 0`` get ``inf``.
    """
    onehots = slot_indicators(table.concepts)
    W = label_weights(table)
    loss, grads = _batch_mass_nll(probs, W[:, y_index].T, onehots)
    reach = W.sum(axis=1)
    if not np.all(reach == 1.0):
        lz, gz = _batch_mass_nll(probs, np.broadcast_to(reach, (len(y_index), reach.size)), onehots)
        loss = loss - lz
        grads = [a - b for a, b in zip(grads, gz)]
    return loss, grads


def batch_semantic_loss(probs, y_index, table: InferenceTable):
    """Vectorised Semantic Loss and its per-slot logit gradients."""
    onehots = slot_indicators(table.concepts)
    return _batch_mass_nll(probs, table.consistent[:, y_index].T.astype(float), onehots)


def batch_pnsp_label_probs(probs, table: InferenceTable) -> np.ndarray:
    """``(N, |Y|)`` label distributions of a PNSP for a batch."""
    mass = joint_from_factors(probs) @ label_weights(table)
    return mass / mass.sum(axis=1, keepdims=True)


def batch_abduce(c_bar: np.ndarray, y_index: np.ndarray, table: InferenceTable) -> np.ndarray:
    """Row-wise :func:`abduce_from` for ``(N, k)`` predicted vectors."""
    out = np.empty_like(c_bar)
    vecs = table.concepts.vectors
    for yi in np.unique(y_index):
        rows = np.flatnonzero(y_index == yi)
        cand = vecs[np.flatnonzero(table.consistent[:, yi])]
        if cand.size == 0:
            raise NoCandidate(f"no concept vector is consistent with label {table.labels.vector(yi)}")
        dist = (c_bar[rows, None, :] != cand[None, :, :]).sum(axis=2)
        out[rows] = cand[np.argmin(dist, axis=1)]
    return out


# --- product real logic -------------------------------------------------

def _fuzzy_ops():
    def xor(a, b):
        return 1 - iff(a, b)

    def implies(a, b):
        return 1 - a + a * b

    def iff(a, b):
        return implies(a, b) * implies(b, a)

    return {
        Const: lambda v: 1.0 if v else 0.0,
        Not: lambda a: 1 - a,
        And: lambda a, b: a * b,
        Or: lambda a, b: a + b - a * b,
        Implies: implies,
        Iff: iff,
        Xor: xor,
    }


_FUZZY = _fuzzy_ops()


class _Dual:
    """Batched forward-mode value: ``v`` has shape ``(N,)``, ``d`` ``(N, k)``."""

    __slots__ = ("v", "d")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, v, d):
        self.v, self.d = v, d

    def _lift(self, x):
        if isinstance(x, _Dual):
            return x
        v = np.broadcast_to(np.asarray(x, dtype=float), self.v.shape)
        return _Dual(v, np.zeros_like(self.d))

    def __add__(self, o):
        o = self._lift(o)
        return _Dual(self.v + o.v, self.d + o.d)

    __radd__ = __add__

    def __sub__(self, o):
        o = self._lift(o)
        return _Dual(self.v - o.v, self.d - o.d)

    def __rsub__(self, o):
        return self._lift(o) - self

    def __mul__(self, o):
        o = self._lift(o)
        return _Dual(self.v * o.v, self.d * o.v[:, None] + o.d * self.v[:, None])

    __rmul__ = __mul__


def _binary_degrees(p: ConceptDistribution) -> np.ndarray:
    if any(c != 2 for c in p.space.cards):
        raise TaskError("fuzzy semantics is only defined for binary concepts")
    return np.array([m[1] for m in p.marginals()])


def _label_truth(labels: Space, y) -> dict[str, int]:
    return dict(zip(labels.names, (int(v) for v in y)))


def fuzzy_satisfaction(p: ConceptDistribution, y, knowledge: Formula, labels: Space) -> float:
    """Product-logic degree to which ``knowledge`` holds, labels clamped to ``y``.

    Concept atoms ``C = 1`` take the degree ``p(C = 1)`` and ``C = 0`` its
    complement.  Note the relaxation is not idempotent: ``A & !A`` at degree
    0.5 evaluates to 0.25, not 0.
    """
    degrees = dict(zip(p.space.names, _binary_degrees(p)))
    crisp = _label_truth(labels, y)

    def atom(a: Atom):
        if a.var in degrees:
            d = degrees[a.var]
            return d if a.value == 1 else 1 - d
        return 1.0 if crisp[a.var] == a.value else 0.0

    return float(fold(knowledge, atom, _FUZZY))


def batch_fuzzy_satisfaction(probs, ys, knowledge: Formula, concepts: Space, labels: Space):
    """Satisfaction degrees ``(N,)`` and gradients w.r.t. the per-slot logits.

    ``probs`` holds one ``(N, 2)`` array per concept slot (softmax outputs),
    ``ys`` an ``(N, m)`` integer array of label vectors.
    """
    if any(c != 2 for c in concepts.cards):
        raise TaskError("fuzzy semantics is only defined for binary concepts")
    ys = np.asarray(ys, dtype=np.int64).reshape(len(probs[0]), len(labels))
    n, k = ys.shape[0], len(concepts)
    slot = {name: i for i, name in enumerate(concepts.names)}
    lab = {name: j for j, name in enumerate(labels.names)}

    def atom(a: Atom):
        if a.var in slot:
            i = slot[a.var]
            d = np.zeros((n, k))
            d[:, i] = 1.0
            deg = _Dual(probs[i][:, 1].astype(float), d)
            return deg if a.value == 1 else 1 - deg
        return (ys[:, lab[a.var]] == a.value).astype(float)

    out = fold(knowledge, atom, _FUZZY)
    if not isinstance(out, _Dual):
        out = _Dual(np.broadcast_to(np.asarray(out, dtype=float), (n,)).copy(), np.zeros((n, k)))
    # d p1 / d z = p1 (1 - p1) * (-1, +1)
    grads = []
    for i in range(k):
        s = probs[i][:, 1] * probs[i][:, 0]
        grads.append((out.d[:, i] * s)[:, None] * np.array([-1.0, 1.0]))
    return out.v, grads


def fuzzy_satisfaction_and_grad(logits, y, knowledge: Formula, concepts: Space, labels: Space):
    """Degree of satisfaction and its gradient w.r.t. per-slot (binary) logits."""
    probs = [softmax(np.asarray(z, dtype=float))[None, :] for z in logits]
    sat, grads = batch_fuzzy_satisfaction(probs, np.asarray([y]), knowledge, concepts, labels)
    return float(sat[0]), [g[0] for g in grads]


def ltn_loss_and_grad(batch_logits, ys, knowledge: Formula, concepts: Space, labels: Space):
    """``1 - mean satisfaction`` over a batch and its per-example logit gradients."""
    n = len(ys)
    total, grads = 0.0, []
    for logits, y in zip(batch_logits, ys):
        sat, g = fuzzy_satisfaction_and_grad(logits, y, knowledge, concepts, labels)
        total += sat
        grads.append([-gi / n for gi in g])
    return 1.0 - total / n, grads


def _crisp_satisfaction(knowledge: Formula, values: dict) -> float:
    return float(fold(knowledge, lambda a: 1.0 if values[a.var] == a.value else 0.0, _FUZZY))


def ltn_inference(p: ConceptDistribution, table: InferenceTable, knowledge: Formula) -> tuple[int, ...]:
    """Most probable concept vector, then the label maximising satisfaction.

    Both argmaxes break ties towards the lexicographically first vector.
    """
    c_hat = p.argmax()
    values = dict(zip(table.concepts.names, c_hat))
    best, best_y = -1.0, None
    for yi in range(table.labels.size):
        y = table.labels.vector(yi)
        sat = _crisp_satisfaction(knowledge, values | _label_truth(table.labels, y))
        if sat > best:
            best, best_y = sat, y
    return best_y


# --- abduction ------------------------------------------------------------

@dataclass(frozen=True)
class AbductionConfig:
    distance: str = "hamming"
    tie_break: str = "lexicographic"

    def __post_init__(self):
        if self.distance != "hamming":
            raise ValueError(f"unsupported distance {self.distance!r}")
        if self.tie_break != "lexicographic":
            raise ValueError(f"unsupported tie break {self.tie_break!r}")


class NoCandidate(ValueError):
    pass


def abduce(p: ConceptDistribution, y, table: InferenceTable, cfg: AbductionConfig = AbductionConfig()):
    """Consistent concept vector nearest (Hamming) to the predicted one."""
    c_bar = np.array(p.argmax())
    return abduce_from(c_bar, table.labels.index(y), table)


def abduce_from(c_bar: np.ndarray, yi: int, table: InferenceTable) -> tuple[int, ...]:
    candidates = np.flatnonzero(table.consistent[:, yi])
    if candidates.size == 0:
        raise NoCandidate(f"no concept vector is consistent with label {table.labels.vector(yi)}")
    vecs = table.concepts.vectors[candidates]
    dist = (vecs != c_bar).sum(axis=1)
    return tuple(int(v) for v in vecs[int(np.argmin(dist))])


# --- extremality -----------------------------------------------------------

def check_extremality(layer: str, c, c2, lam: float, table: InferenceTable) -> bool:
    """Whether a mixture of two one-hot concept vectors is strictly less peaked
    than the more peaked endpoint.

    Vacuously true when both endpoints have the same most likely label.
    """
    if not 0 < lam < 1:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    dist = {"pnsp": pnsp_label_dist, "sl": sl_label_dist}.get(layer)
    if dist is None:
        raise ValueError(f"unknown layer {layer!r}")
    space = table.concepts
    a = dist(ConceptDistribution(space, table=_onehot(space, c)), table)
    b = dist(ConceptDistribution(space, table=_onehot(space, c2)), table)
    if np.argmax(a.probs) == np.argmax(b.probs):
        return True
    mix = lam * _onehot(space, c) + (1 - lam) * _onehot(space, c2)
    m = dist(ConceptDistribution(space, table=mix), table)
    return bool(m.probs.max() < max(a.probs.max(), b.probs.max()))


def _onehot(space: Space, c) -> np.ndarray:
    t = np.zeros(space.size)
    t[space.index(c)] = 1.0
    return t
