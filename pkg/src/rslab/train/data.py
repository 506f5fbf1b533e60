"""Synthetic renderings of NeSy tasks and their on-disk format."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..logic import TaskSpec, build_beta_star, parse_task, pretty_print

SCHEMA_VERSION = 1
RENDERS = ("blockwise", "entangled")


@dataclass(frozen=True)
class SyntheticTaskConfig:
    """How to render a task: one-hot blocks per concept, optionally mixed.

    ``noise_rate`` flips each input bit independently; the entangled render
    multiplies the blockwise vector by a fixed random orthogonal matrix.
    """

    task: TaskSpec
    render: str = "blockwise"
    noise_rate: float = 0.0
    samples_per_support_vector: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.render not in RENDERS:
            raise ValueError(f"render must be one of {RENDERS}, got {self.render!r}")
        if not 0 <= self.noise_rate < 0.5:
            raise ValueError(f"noise rate must lie in [0, 0.5), got {self.noise_rate}")
        if self.samples_per_support_vector < 1:
            raise ValueError("samples_per_support_vector must be >= 1")


class Renderer:
    """Maps concept vectors to inputs; holds the fixed mixing matrix."""

    def __init__(self, task: TaskSpec, render: str, noise_rate: float, mixing: np.ndarray | None):
        self.task = task
        self.render = render
        self.noise_rate = noise_rate
        self.mixing = mixing
        cards = task.concepts.cards
        self.offsets = np.concatenate([[0], np.cumsum(cards)]).astype(int)
        self.dim = int(self.offsets[-1])
        self.blocks = [tuple(range(self.offsets[i], self.offsets[i + 1])) for i in range(len(cards))]

    def __call__(self, G: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        G = np.asarray(G, dtype=np.int64)
        X = np.zeros((G.shape[0], self.dim))
        for i in range(G.shape[1]):
            X[np.arange(G.shape[0]), self.offsets[i] + G[:, i]] = 1.0
        if self.noise_rate > 0:
            if rng is None:
                raise ValueError("a noisy render needs a random generator")
            flips = rng.random(X.shape) < self.noise_rate
            X = np.where(flips, 1.0 - X, X)
        if self.mixing is not None:
            X = X @ self.mixing
        return X

    def decode(self, X: np.ndarray) -> np.ndarray:
        """Recover concept vectors from noiseless (or mildly noisy) inputs."""
        B = X @ self.mixing.T if self.mixing is not None else X
        return np.stack([np.argmax(B[:, list(b)], axis=1) for b in self.blocks], axis=1)


@dataclass
class Dataset:
    X: np.ndarray
    G: np.ndarray
    Y: np.ndarray
    y_index: np.ndarray
    task: TaskSpec
    renderer: Renderer
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.X.shape[0])

    @property
    def blocks(self):
        return self.renderer.blocks

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.X, self.G, self.Y):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def _streams(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def make_renderer(cfg: SyntheticTaskConfig) -> Renderer:
    _, mix_rng = _streams(cfg.seed, 2)
    mixing = None
    if cfg.render == "entangled":
        dim = sum(cfg.task.concepts.cards)
        q, r = np.linalg.qr(mix_rng.normal(size=(dim, dim)))
        mixing = q * np.sign(np.diag(r))
    return Renderer(cfg.task, cfg.render, cfg.noise_rate, mixing)


def generate_dataset(cfg: SyntheticTaskConfig) -> Dataset:
    """Render every support vector ``samples_per_support_vector`` times.

    Rows are grouped by support vector in canonical order; labels come from
    the ground-truth inference table.
    """
    table = build_beta_star(cfg.task)
    noise_rng, _ = _streams(cfg.seed, 2)
    renderer = make_renderer(cfg)
    G = np.repeat(np.array(cfg.task.support, dtype=np.int64), cfg.samples_per_support_vector, axis=0)
    X = renderer(G, noise_rng)
    y_index = table.label_index[cfg.task.concepts.indices(G)]
    Y = table.labels.vectors[y_index]
    meta = {
        "render": cfg.render, "noise_rate": cfg.noise_rate,
        "samples_per_support_vector": cfg.samples_per_support_vector, "seed": cfg.seed,
    }
    return Dataset(X, G, Y, y_index, cfg.task, renderer, meta)


def save_dataset(ds: Dataset, path: str) -> str:
    """Write ``path`` (CSV) and ``path + '.json'`` (sidecar); returns the sidecar path."""
    concepts, labels = ds.task.concepts.names, ds.task.labels.names
    header = [f"x{j}" for j in range(ds.X.shape[1])] + [f"g_{n}" for n in concepts] + [f"y_{n}" for n in labels]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, g, y in zip(ds.X, ds.G, ds.Y):
            w.writerow([repr(float(v)) for v in x] + [int(v) for v in g] + [int(v) for v in y])
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "kind": "dataset",
        "columns": header,
        "rows": len(ds),
        "task": pretty_print(ds.task),
        "config": ds.config,
        "digest": ds.digest(),
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path + ".json"


def load_dataset(path: str) -> Dataset:
    with open(path + ".json", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported dataset schema {meta.get('schema_version')}")
    task = parse_task(meta["task"])
    cfg = SyntheticTaskConfig(task, meta["config"]["render"], meta["config"]["noise_rate"],
                              meta["config"]["samples_per_support_vector"], meta["config"]["seed"])
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    k, m = len(task.concepts), len(task.labels)
    X = rows[:, : rows.shape[1] - k - m]
    G = rows[:, X.shape[1]: X.shape[1] + k].astype(np.int64)
    Y = rows[:, X.shape[1] + k:].astype(np.int64)
    table = build_beta_star(task)
    y_index = table.labels.indices(Y)
    return Dataset(X, G, Y, y_index, task, make_renderer(cfg), meta["config"])
