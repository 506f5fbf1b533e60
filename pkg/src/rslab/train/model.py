"""A small tanh MLP concept extractor with hand-written backpropagation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..inference import softmax
from ..logic.spaces import TaskError
from .data import Dataset, Renderer


class Unsupported(TaskError):
    """A requested configuration is outside what the harness supports."""


@dataclass
class Forward:
    X: np.ndarray
    hidden: list
    logits: list
    probs: list
    label_logits: np.ndarray | None
    recon: np.ndarray | None


class Extractor:
    """Concept extractor: one hidden layer per slot group, one softmax head per slot.

    ``groups`` partitions the concept slots; each group sees only its slots'
    input blocks (blockwise render) and owns a hidden layer.  ``head_mode``
    ``"joint"`` is a single group over the whole input, ``"perslot"`` one group
    per slot.  With ``shared=True`` all groups share weights (requires
    identical group shapes).  Logits are divided by ``temperature``.
    """

    def __init__(self, blocks, cards, hidden: int = 16, head_mode: str = "joint", groups=None,
                 shared: bool = False, temperature: float = 1.0, label_dim: int | None = None,
                 recon_dim: int | None = None, seed: int = 0, blockwise: bool = True, scale: float = 1.0):
        k = len(cards)
        if temperature < 1.0:
            raise ValueError("temperature must be >= 1")
        if groups is None:
            if head_mode == "joint":
                groups = [tuple(range(k))]
            elif head_mode == "perslot":
                groups = [(i,) for i in range(k)]
            else:
                raise ValueError(f"unknown head mode {head_mode!r}")
        groups = [tuple(int(i) for i in g) for g in groups]
        if sorted(i for g in groups for i in g) != list(range(k)):
            raise ValueError(f"groups {groups} must partition the {k} slots")
        dim = sum(len(b) for b in blocks)
        if len(groups) > 1 and not blockwise:
            raise Unsupported("per-group extractors need a blockwise render")
        self.cards = tuple(int(c) for c in cards)
        self.groups = groups
        self.shared = shared
        self.temperature = float(temperature)
        self.cols = [
            np.array([c for i in g for c in blocks[i]], dtype=np.int64) if len(groups) > 1
            else np.arange(dim, dtype=np.int64)
            for g in groups
        ]
        if shared:
            shapes = {(len(c), tuple(self.cards[i] for i in g)) for c, g in zip(self.cols, groups)}
            if len(shapes) != 1:
                raise Unsupported("shared weights need groups with identical input and head shapes")
        self.hidden = hidden
        self.head_mode = head_mode
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for gi, g in enumerate(groups):
            if shared and gi > 0:
                continue
            d_in = len(self.cols[gi])
            self.params[self._p(gi, "W1")] = rng.normal(0, scale / np.sqrt(d_in), (d_in, hidden))
            self.params[self._p(gi, "b1")] = np.zeros(hidden)
            for pos, i in enumerate(g):
                self.params[self._p(gi, f"W2.{pos}")] = rng.normal(0, scale / np.sqrt(hidden), (hidden, self.cards[i]))
                self.params[self._p(gi, f"b2.{pos}")] = np.zeros(self.cards[i])
        self.label_dim = label_dim
        if label_dim:
            width = hidden * len(groups)
            self.params["Wl"] = rng.normal(0, 1 / np.sqrt(width), (width, label_dim))
            self.params["bl"] = np.zeros(label_dim)
        self.recon_dim = recon_dim
        if recon_dim:
            self.params["Wd"] = rng.normal(0, 0.1, (sum(self.cards), recon_dim))
            self.params["bd"] = np.zeros(recon_dim)

    @classmethod
    def for_dataset(cls, ds: Dataset, **kw) -> "Extractor":
        kw.setdefault("blockwise", ds.renderer.render == "blockwise")
        return cls(ds.blocks, ds.task.concepts.cards, **kw)

    def _p(self, gi: int, name: str) -> str:
        return name if self.shared else f"g{gi}.{name}"

    def copy(self) -> "Extractor":
        out = object.__new__(Extractor)
        out.__dict__.update(self.__dict__)
        out.params = {k: v.copy() for k, v in self.params.items()}
        return out

    def forward(self, X: np.ndarray) -> Forward:
        k = len(self.cards)
        hidden, logits = [], [None] * k
        for gi, g in enumerate(self.groups):
            P = self.params
            h = np.tanh(X[:, self.cols[gi]] @ P[self._p(gi, "W1")] + P[self._p(gi, "b1")])
            hidden.append(h)
            for pos, i in enumerate(g):
                logits[i] = (h @ P[self._p(gi, f"W2.{pos}")] + P[self._p(gi, f"b2.{pos}")]) / self.temperature
        probs = [softmax(z) for z in logits]
        label_logits = None
        if self.label_dim:
            label_logits = np.concatenate(hidden, axis=1) @ self.params["Wl"] + self.params["bl"]
        recon = None
        if self.recon_dim:
            recon = np.concatenate(probs, axis=1) @ self.params["Wd"] + self.params["bd"]
        return Forward(X, hidden, logits, probs, label_logits, recon)

    def predict(self, X: np.ndarray) -> list[np.ndarray]:
        return self.forward(X).probs

    def backward(self, fw: Forward, dlogits, dlabel=None, drecon=None) -> dict:
        """Parameter gradients from gradients w.r.t. the (tempered) slot logits,
        the label logits and the reconstruction output."""
        grads = {name: np.zeros_like(v) for name, v in self.params.items()}
        dlogits = [np.zeros_like(p) if d is None else d for d, p in zip(dlogits, fw.probs)]
        if drecon is not None:
            P = np.concatenate(fw.probs, axis=1)
            grads["Wd"] += P.T @ drecon
            grads["bd"] += drecon.sum(axis=0)
            dP = drecon @ self.params["Wd"].T
            off = 0
            dlogits = list(dlogits)
            for i, p in enumerate(fw.probs):
                d = dP[:, off: off + p.shape[1]]
                off += p.shape[1]
                dlogits[i] = dlogits[i] + softmax_backward(p, d)
        dh_label = None
        if dlabel is not None:
            H = np.concatenate(fw.hidden, axis=1)
            grads["Wl"] += H.T @ dlabel
            grads["bl"] += dlabel.sum(axis=0)
            dh_label = dlabel @ self.params["Wl"].T
        for gi, g in enumerate(self.groups):
            h = fw.hidden[gi]
            dh = np.zeros_like(h)
            for pos, i in enumerate(g):
                dz = dlogits[i] / self.temperature
                W2 = self._p(gi, f"W2.{pos}")
                grads[W2] += h.T @ dz
                grads[self._p(gi, f"b2.{pos}")] += dz.sum(axis=0)
                dh += dz @ self.params[W2].T
            if dh_label is not None:
                dh += dh_label[:, gi * self.hidden:(gi + 1) * self.hidden]
            da = dh * (1 - h * h)
            grads[self._p(gi, "W1")] += fw.X[:, self.cols[gi]].T @ da
            grads[self._p(gi, "b1")] += da.sum(axis=0)
        return grads

    def step(self, grads: dict, lr: float) -> None:
        for name, g in grads.items():
            self.params[name] -= lr * g

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def set_flat(self, v: np.ndarray) -> None:
        off = 0
        for k in sorted(self.params):
            n = self.params[k].size
            self.params[k] = v[off: off + n].reshape(self.params[k].shape).copy()
            off += n

    def flat_grads(self, grads: dict) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in sorted(self.params)])


def softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits from the gradient w.r.t. softmax outputs."""
    return p * (dp - (dp * p).sum(axis=1, keepdims=True))


class OracleExtractor:
    """Inverts the renderer and applies a deterministic remap (or identity).

    Useful as a ground-truth, shortcut or flipped reference extractor.
    """

    def __init__(self, renderer: Renderer, remap=None, space=None):
        self.renderer = renderer
        self.remap = remap
        self.cards = renderer.task.concepts.cards
        self.label_dim = None

    def predict(self, X: np.ndarray) -> list[np.ndarray]:
        G = self.renderer.decode(X)
        if self.remap is not None:
            G = np.array([self.remap.apply(g) for g in G], dtype=np.int64).reshape(G.shape)
        return [np.eye(c)[G[:, i]] for i, c in enumerate(self.cards)]


class ConstantExtractor:
    """Outputs the same per-slot distributions for every input."""

    def __init__(self, factors):
        self.factors = [np.asarray(f, dtype=float) for f in factors]
        self.label_dim = None

    def predict(self, X: np.ndarray) -> list[np.ndarray]:
        return [np.tile(f, (X.shape[0], 1)) for f in self.factors]
