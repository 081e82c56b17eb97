"""BIC-based selection between the prismatic and revolute candidates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kinfit import KINDS, FitConfig, FitResult, TooFewObservations, mlesac_fit


class NoCandidateFits(ValueError):
    """Neither candidate model could be fitted."""


def bic(log_likelihood: float, k: int, n: int) -> float:
    """``-2 logL + k ln n``."""
    if n < 1 or k < 1:
        raise ValueError("bic needs n >= 1 and k >= 1")
    return -2.0 * log_likelihood + k * math.log(n)


def posteriors(bics) -> np.ndarray:
    """Model posteriors under a uniform model prior from the BIC differences."""
    b = np.asarray(bics, dtype=float)
    if b.size == 0:
        raise ValueError("no candidates")
    w = np.exp(-0.5 * (b - b.min()))
    return w / w.sum()


@dataclass
class Candidate:
    kind: str
    bic: float
    posterior: float
    fit: FitResult | None = None


@dataclass
class ModelPosterior:
    candidates: list
    winner: str
    errors: dict = field(default_factory=dict)

    def posterior(self, kind: str) -> float:
        for c in self.candidates:
            if c.kind == kind:
                return c.posterior
        return 0.0

    def bic(self, kind: str) -> float:
        for c in self.candidates:
            if c.kind == kind:
                return c.bic
        return math.inf

    @property
    def best(self) -> Candidate:
        return next(c for c in self.candidates if c.kind == self.winner)

    @property
    def min_bic(self) -> float:
        return self.best.bic

    def report(self) -> str:
        lines = [f"{c.kind} {c.bic!r} {c.posterior!r}" for c in self.candidates]
        lines.append(f"winner {self.winner}")
        return "\n".join(lines) + "\n"


def select_model(traj, config: FitConfig | None = None, **overrides) -> ModelPosterior:
    """Fit both candidates and rank them by BIC.

    A candidate that cannot be fitted drops out; if only one remains it gets
    posterior 1. Ties go to prismatic, the simpler model.
    """
    cfg = config or FitConfig()
    n = len(traj)
    if n < 3:
        raise TooFewObservations(f"model selection needs 3 observations, got {n}")
    fits, errors = {}, {}
    for kind in KINDS:
        try:
            fits[kind] = mlesac_fit(traj, kind, cfg, **overrides)
        except ValueError as exc:
            errors[kind] = exc
    if not fits:
        raise NoCandidateFits("; ".join(f"{k}: {e}" for k, e in errors.items()))
    kinds = list(fits)
    bics = [bic(fits[k].log_likelihood, fits[k].model.k, n) for k in kinds]
    post = posteriors(bics)
    cands = [Candidate(k, b, float(p), fits[k]) for k, b, p in zip(kinds, bics, post)]
    # KINDS lists prismatic first, so argmin breaks ties toward it
    winner = kinds[int(np.argmin(bics))]
    return ModelPosterior(cands, winner, errors)
