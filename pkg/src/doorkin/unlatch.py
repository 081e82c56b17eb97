"""Trial-and-error handle unlatching driven by simulated wrist torque feedback.

The wrist first turns anti-clockwise; if the torque exceeds the threshold the
motion is aborted and the wrist turns clockwise. If both directions are blocked
the handle needs no actuation (e.g. a fixed pull handle).
"""
from __future__ import annotations

from dataclasses import dataclass, field

MECHANISMS = ("lever_ccw", "lever_cw", "knob_either", "fixed")
DIRECTIONS = ("ccw", "cw")
STATES = ("unlatched_ccw", "unlatched_cw", "no_actuation_required")
DEFAULT_THRESHOLD = 2.0  # N m

_FREE = {"lever_ccw": {"ccw"}, "lever_cw": {"cw"}, "knob_either": {"ccw", "cw"}, "fixed": set()}


@dataclass(frozen=True)
class HandleMechanism:
    """Constant-torque handle model: ``resist_torque`` the free way, ``block_torque`` otherwise."""

    kind: str
    required_angle: float = 0.6
    resist_torque: float = 0.8
    block_torque: float = 6.0

    def __post_init__(self):
        if self.kind not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.kind!r}")
        if not self.required_angle > 0:
            raise ValueError("required_angle must be positive")
        if not self.block_torque > self.resist_torque > 0:
            raise ValueError("need block_torque > resist_torque > 0")

    def torque(self, direction: str) -> float:
        if direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {direction!r}")
        return self.resist_torque if direction in _FREE[self.kind] else self.block_torque


@dataclass
class UnlatchOutcome:
    state: str
    attempts: list = field(default_factory=list)  # (direction, peak_torque)


def attempt_turn(mech: HandleMechanism, direction: str, threshold: float = DEFAULT_THRESHOLD):
    """Turn through ``required_angle``; fails when the torque exceeds ``threshold``.

    Returns ``(succeeded, peak_torque)``. The torque profile is constant, so the
    peak is reached at once and an aborted turn leaves the grasp unchanged.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    tau = mech.torque(direction)
    return tau <= threshold, tau


def unlatch(mech: HandleMechanism, threshold: float = DEFAULT_THRESHOLD) -> UnlatchOutcome:
    ok, tau = attempt_turn(mech, "ccw", threshold)
    attempts = [("ccw", tau)]
    if ok:
        return UnlatchOutcome("unlatched_ccw", attempts)
    ok, tau = attempt_turn(mech, "cw", threshold)
    attempts.append(("cw", tau))
    return UnlatchOutcome("unlatched_cw" if ok else "no_actuation_required", attempts)
