"""Global enumeration limits shared by the checkers and the command line."""
from __future__ import annotations

from dataclasses import dataclass

from .formulas import Bounds
from .opsem import EnvBudget
from .traces import TraceBounds


@dataclass(frozen=True)
class Limits:
    """Values range over 0..value, addresses over 1..addr."""

    value: int = 3
    addr: int = 6
    loop: int = 3
    wait: int = 2
    env: int = 2
    jobs: int = 1

    def __post_init__(self):
        for name in ("value", "addr", "loop", "wait", "env"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} bound must be non-negative")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")

    @property
    def values(self) -> tuple:
        return tuple(range(self.value + 1))

    @property
    def addresses(self) -> tuple:
        return tuple(range(1, self.addr + 1))

    def heap_bounds(self) -> Bounds:
        return Bounds(self.addresses, self.values)

    def trace_bounds(self) -> TraceBounds:
        return TraceBounds(self.values, self.addresses, self.loop, self.wait)

    def env_budget(self, heap_mode: str = "full") -> EnvBudget:
        return EnvBudget(self.env, self.values, self.addresses, heap_mode)
