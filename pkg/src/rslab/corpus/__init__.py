"""Bundled example tasks, loadable by name."""

from __future__ import annotations

from importlib.resources import files

from ..logic import TaskSpec, parse_task


def names() -> list[str]:
    return sorted(p.name[:-5] for p in files(__name__).iterdir() if p.name.endswith(".task"))


def path(name: str):
    return files(__name__) / f"{name}.task"


def load(name: str) -> TaskSpec:
    if name not in names():
        raise KeyError(f"no bundled task named {name!r}")
    return parse_task(path(name).read_text(encoding="utf-8"))
