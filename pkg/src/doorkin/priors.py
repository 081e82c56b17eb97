"""Prior-experience store and merge-based model selection with stored trajectories.

A new trajectory is merged with a stored one of the same door class when one
joint model explains both better than two separate models, judged by BIC:
merge iff ``BIC(new + stored) < BIC(new) + BIC(stored)``. Among the stored
trajectories passing that test the one giving the highest joint score
``-BIC(new + stored) / 2`` wins (earliest on ties).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .geometry import ParseError
from .kinfit import KINDS, FitConfig, Trajectory, TRAJ_CLASSES, read_traj
from .modelsel import ModelPosterior, select_model

PROVENANCES = ("robot_experience", "human_demonstration")
MANIFEST = "store.manifest"


class StoreError(ValueError):
    pass


def fnv1a_64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def traj_filename(traj: Trajectory) -> str:
    return f"{fnv1a_64(traj.to_text().encode()):016x}.traj"


@dataclass(eq=False)
class StoreEntry:
    trajectory: Trajectory
    provenance: str = "robot_experience"
    timestamp: int = 0
    _fits: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def door_class(self) -> str:
        return self.trajectory.door_class

    def selection(self, cfg: FitConfig) -> ModelPosterior:
        key = repr(cfg)
        if key not in self._fits:
            self._fits[key] = select_model(self.trajectory, cfg)
        return self._fits[key]


@dataclass(eq=False)
class PriorStore:
    entries: list = field(default_factory=list)

    def of_class(self, door_class: str) -> list:
        return [e for e in self.entries if e.door_class == door_class]

    def __len__(self) -> int:
        return len(self.entries)

    def copy(self) -> PriorStore:
        return PriorStore(list(self.entries))

    def add(self, traj: Trajectory, provenance: str = "robot_experience",
            timestamp: int | None = None) -> StoreEntry:
        if timestamp is None:
            timestamp = max((e.timestamp for e in self.entries), default=0) + 1
        entry = StoreEntry(traj, provenance, int(timestamp))
        self.entries.append(entry)
        return entry

    def manifest_text(self) -> str:
        return "".join(f"{e.door_class} {e.provenance} {e.timestamp} {traj_filename(e.trajectory)}\n"
                       for e in self.entries)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        keep = set()
        for e in self.entries:
            name = traj_filename(e.trajectory)
            keep.add(name)
            target = d / name
            if not target.exists():
                target.write_text(e.trajectory.to_text())
        tmp = d / (MANIFEST + ".tmp")
        tmp.write_text(self.manifest_text())
        os.replace(tmp, d / MANIFEST)
        for f in d.glob("*.traj"):
            if f.name not in keep:
                f.unlink()

    @classmethod
    def load(cls, directory) -> PriorStore:
        d = Path(directory)
        mpath = d / MANIFEST
        if not mpath.exists():
            return cls()
        entries = []
        for lineno, line in enumerate(mpath.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            f = line.split()
            if len(f) != 4:
                raise StoreError(str(ParseError("expected 'class provenance timestamp filename'",
                                                mpath, lineno)))
            cls_, prov, ts, name = f
            if cls_ not in TRAJ_CLASSES or prov not in PROVENANCES:
                raise StoreError(str(ParseError(f"bad class/provenance {cls_!r} {prov!r}", mpath, lineno)))
            try:
                ts = int(ts)
                traj = read_traj(d / name)
            except (ValueError, OSError) as exc:
                raise StoreError(str(ParseError(str(exc), mpath, lineno))) from None
            if traj.door_class != cls_ or traj_filename(traj) != name:
                raise StoreError(str(ParseError(f"{name} does not match its manifest entry", mpath, lineno)))
            entries.append(StoreEntry(traj, prov, ts))
        return cls(entries)


def evidence_score(traj_union: Trajectory, model_kind: str | None = None,
                   config: FitConfig | None = None) -> float:
    """Log-evidence proxy ``-BIC / 2``; best candidate unless ``model_kind`` is given."""
    if len(traj_union) == 0:
        raise ValueError("empty trajectory")
    sel = select_model(traj_union, config or FitConfig())
    if model_kind is None:
        return -0.5 * sel.min_bic
    if model_kind not in KINDS:
        raise ValueError(f"unknown model kind {model_kind!r}")
    return -0.5 * sel.bic(model_kind)


def should_merge(sel_union: ModelPosterior, sel_new: ModelPosterior, sel_s: ModelPosterior) -> bool:
    return sel_union.min_bic < sel_new.min_bic + sel_s.min_bic


@dataclass
class PriorSelection:
    new: ModelPosterior
    prior: ModelPosterior | None
    merged: ModelPosterior | None
    merged_index: int | None  # index into store.entries
    store: PriorStore

    @property
    def models(self) -> list:
        """Best model set: the new model, plus the stored and joint ones on a merge."""
        out = [self.new.best.fit.model]
        if self.merged is not None:
            out += [self.prior.best.fit.model, self.merged.best.fit.model]
        return out

    @property
    def selection(self) -> ModelPosterior:
        return self.merged if self.merged is not None else self.new


def select_with_priors(new_traj: Trajectory, store: PriorStore, config: FitConfig | None = None,
                       provenance: str = "robot_experience",
                       timestamp: int | None = None) -> PriorSelection:
    """Model selection for ``new_traj`` using same-class stored trajectories.

    Returns the selections and an updated copy of the store: the new trajectory
    is appended, or, on a merge, the matched entry is replaced by the union.
    ``store`` itself is never modified.
    """
    cfg = config or FitConfig()
    sel_new = select_model(new_traj, cfg)
    best_score = -float("inf")
    best = None
    for i, entry in enumerate(store.entries):
        if entry.door_class != new_traj.door_class:
            continue
        sel_s = entry.selection(cfg)
        union = entry.trajectory + new_traj
        sel_u = select_model(union, cfg)
        score = -0.5 * sel_u.min_bic
        if should_merge(sel_u, sel_new, sel_s) and score > best_score:
            best_score, best = score, (i, sel_s, sel_u, union)

    updated = store.copy()
    if timestamp is None:
        timestamp = max((e.timestamp for e in store.entries), default=0) + 1
    if best is None:
        updated.add(new_traj, provenance, timestamp)
        return PriorSelection(sel_new, None, None, None, updated)
    i, sel_s, sel_u, union = best
    old = store.entries[i]
    updated.entries[i] = StoreEntry(union, old.provenance, int(timestamp))
    return PriorSelection(sel_new, sel_s, sel_u, i, updated)
