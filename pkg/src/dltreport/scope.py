"""Reporting scopes of the three-level aggregation hierarchy."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional


class Level(str, Enum):
    LOCAL = "LOCAL"
    NATIONAL = "NATIONAL"
    SUPRANATIONAL = "SUPRANATIONAL"


@dataclass(frozen=True, order=True)
class Scope:
    level: Level
    key: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        if (self.level is Level.SUPRANATIONAL) != (self.key is None):
            raise ValueError(f"{self.level.value} scope {'takes no' if self.key else 'needs a'} key")

    @classmethod
    def local(cls, lei: str) -> "Scope":
        return cls(Level.LOCAL, lei)

    @classmethod
    def national(cls, jurisdiction: str) -> "Scope":
        return cls(Level.NATIONAL, jurisdiction)

    @classmethod
    def supranational(cls) -> "Scope":
        return cls(Level.SUPRANATIONAL)

    def to_dict(self) -> dict:
        return {"level": self.level.value, "key": self.key}

    def __str__(self):
        return self.level.value if self.key is None else f"{self.level.value}:{self.key}"
