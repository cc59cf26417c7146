"""Alignment-mark layouts.

Marks come in three groups: ``top`` and ``bottom`` rows along the image-area
borders, and ``edge`` columns along its left and right borders. A layout can
deactivate groups, which is how the predictor skips edge-mark measurements.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GROUPS = ("top", "bottom", "edge")


@dataclass(frozen=True)
class Mark:
    x: float
    y: float
    group: str

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"unknown mark group {self.group!r}; expected one of {GROUPS}")


@dataclass(frozen=True)
class MarkLayout:
    marks: tuple[Mark, ...]
    active_groups: frozenset[str] = field(default=frozenset(GROUPS))
    layout_id: str = "layout"

    def __post_init__(self):
        object.__setattr__(self, "marks", tuple(self.marks))
        object.__setattr__(self, "active_groups", frozenset(self.active_groups))
        unknown = set(self.active_groups) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown mark groups {sorted(unknown)}")

    @property
    def active(self) -> tuple[Mark, ...]:
        return tuple(m for m in self.marks if m.group in self.active_groups)

    @property
    def n_active(self) -> int:
        return len(self.active)

    def positions(self, active_only: bool = True) -> np.ndarray:
        marks = self.active if active_only else self.marks
        return np.array([(m.x, m.y) for m in marks], dtype=float).reshape(-1, 2)

    def with_groups(self, groups, layout_id: str | None = None) -> "MarkLayout":
        return MarkLayout(self.marks, frozenset(groups), layout_id or self.layout_id)

    def active_index(self, reference: "MarkLayout") -> np.ndarray:
        """Rows of ``reference``'s active measurement vector that this layout keeps.

        Measurement vectors stack all x-components first, then all y-components.
        """
        ref = reference.active
        keep = [i for i, m in enumerate(ref) if m.group in self.active_groups and m in self.marks]
        keep = np.asarray(keep, dtype=int)
        return np.concatenate([keep, keep + len(ref)])


@dataclass(frozen=True, eq=False)
class SampledLayout:
    """A mark layout together with its sampling matrix ``S`` (dense field -> marks)."""

    layout: MarkLayout
    S: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        if S.shape[0] != 2 * self.layout.n_active:
            raise ValueError(f"S has {S.shape[0]} rows for {self.layout.n_active} active marks")
        object.__setattr__(self, "S", S)

    @property
    def n_active(self) -> int:
        return self.layout.n_active

    @property
    def layout_id(self) -> str:
        return self.layout.layout_id


def standard_layout(
    x_min: float,
    x_max: float,
    y_min: float,
    y_max: float,
    n_per_row: int = 4,
    n_per_edge: int = 3,
    groups=GROUPS,
) -> MarkLayout:
    """Top-bottom-edge layout on the border of an image area."""
    xs = np.linspace(x_min, x_max, n_per_row)
    ys = np.linspace(y_min, y_max, n_per_edge + 2)[1:-1]
    marks = [Mark(float(x), float(y_max), "top") for x in xs]
    marks += [Mark(float(x), float(y_min), "bottom") for x in xs]
    marks += [Mark(float(x_min), float(y), "edge") for y in ys]
    marks += [Mark(float(x_max), float(y), "edge") for y in ys]
    return MarkLayout(tuple(marks), frozenset(groups), "top-bottom-edge")
