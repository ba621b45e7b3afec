"""Rectilinear sampling grids used by the offline certification routines."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


class EmptyGridError(ValueError):
    """Raised when a verification is asked to run over zero points."""


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned grid: ``num[i]`` evenly spaced points on ``[lo[i], hi[i]]``.

    Points are enumerated in C order (first axis slowest), which fixes the
    order counterexamples are reported in.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    num: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lo)
        hi = tuple(float(x) for x in self.hi)
        num = tuple(int(n) for n in self.num)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "num", num)
        if not (len(lo) == len(hi) == len(num)):
            raise ValueError("lo, hi and num must have the same length")
        for a, b, n in zip(lo, hi, num):
            if not (np.isfinite(a) and np.isfinite(b)) or b < a:
                raise ValueError(f"invalid axis range [{a}, {b}]")
            if n < 1:
                raise ValueError("axis resolution must be positive")

    @classmethod
    def uniform(cls, lo: float, hi: float, num: int, dim: int) -> "GridSpec":
        return cls((lo,) * dim, (hi,) * dim, (num,) * dim)

    @classmethod
    def product(cls, *grids: "GridSpec") -> "GridSpec":
        return cls(
            sum((g.lo for g in grids), ()),
            sum((g.hi for g in grids), ()),
            sum((g.num for g in grids), ()),
        )

    @property
    def ndim(self) -> int:
        return len(self.num)

    @property
    def size(self) -> int:
        return int(np.prod(self.num)) if self.num else 0

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, n) for a, b, n in zip(self.lo, self.hi, self.num)]

    def refine(self, factor: int = 2) -> "GridSpec":
        """Grid whose points include every point of ``self``."""
        return GridSpec(self.lo, self.hi, tuple((n - 1) * factor + 1 for n in self.num))

    def points(self) -> np.ndarray:
        """All points as an array of shape (size, ndim)."""
        if self.size == 0:
            raise EmptyGridError("grid has no points")
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def chunks(self, max_points: int = 262_144) -> Iterator[np.ndarray]:
        """Yield the points in order, in blocks of at most ``max_points`` rows."""
        if self.size == 0:
            raise EmptyGridError("grid has no points")
        axes = self.axes()
        total = self.size
        for start in range(0, total, max_points):
            idx = np.arange(start, min(start + max_points, total))
            sub = np.unravel_index(idx, self.num)
            yield np.stack([ax[i] for ax, i in zip(axes, sub)], axis=-1)

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "num": list(self.num)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(tuple(d["lo"]), tuple(d["hi"]), tuple(d["num"]))


def as_grid(points: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        raise EmptyGridError("no points supplied")
    return pts
