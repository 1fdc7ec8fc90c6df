"""Events fed into protocol engines and the actions they answer with.

Engines are deterministic reactors: `step(event)` consumes one event and returns
a list of actions. They own no clock and do no IO; the simulator turns actions
into envelopes and timer events.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional


@dataclass(frozen=True)
class InputEvent:
    value: Any


@dataclass(frozen=True)
class Deliver:
    sender: int
    message: Any


@dataclass(frozen=True)
class TimerFired:
    key: tuple


@dataclass(frozen=True)
class Broadcast:
    message: Any


@dataclass(frozen=True)
class Send:
    receiver: int
    message: Any


@dataclass(frozen=True)
class SetTimer:
    key: tuple
    deltas: int = 2


@dataclass(frozen=True)
class Output:
    """One protocol output; `stage` is opt/low/high/commit/slot/view/decide"""
    stage: str
    value: Any
    proof: Any = None
    key: tuple = ()
    meta: dict = field(default_factory=dict, compare=False)


class ProtocolEngine:
    """Base class of every per-party engine"""

    def __init__(self, party: int):
        self.party = party
        self.dropped = 0

    def step(self, event) -> list:
        raise NotImplementedError


def child_index(instance: str, parent: str, marker: str) -> Optional[int]:
    """Index of the direct child of `parent` named `<marker><index>` that `instance` lives under."""
    prefix = f"{parent}/{marker}"
    if not instance.startswith(prefix):
        return None
    head = instance[len(prefix):].split("/", 1)[0]
    if not head.isdigit():
        return None
    return int(head)
