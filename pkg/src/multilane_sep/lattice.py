"""Finite-window configurations on Z x W.

A window is either a horizontal ring (``Periodic``, columns ``0..L-1``) or a
closed segment (``Closed``, columns ``-M..M`` with ``L = 2M + 1``).  On a
closed window the exterior is understood as empty to the left and full to the
right, which is the convention under which blocking measures live.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np


class HBoundary(str, enum.Enum):
    PERIODIC = "periodic"
    CLOSED = "closed"


class VTopology(str, enum.Enum):
    TWO_LANE = "two_lane"
    TORUS = "torus"


@dataclass(frozen=True)
class LaneGeometry:
    n_lanes: int
    length: int
    h_boundary: HBoundary = HBoundary.PERIODIC
    v_topology: VTopology = VTopology.TWO_LANE

    def __post_init__(self):
        object.__setattr__(self, "h_boundary", HBoundary(self.h_boundary))
        object.__setattr__(self, "v_topology", VTopology(self.v_topology))
        if self.n_lanes < 2:
            raise ValueError(f"n_lanes must be >= 2, got {self.n_lanes}")
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")
        if self.v_topology is VTopology.TWO_LANE and self.n_lanes != 2:
            raise ValueError("two-lane topology requires n_lanes == 2")
        if self.h_boundary is HBoundary.CLOSED and self.length % 2 != 1:
            raise ValueError("closed windows have odd length L = 2M + 1")

    @classmethod
    def ring(cls, length: int, n_lanes: int = 2) -> "LaneGeometry":
        topo = VTopology.TWO_LANE if n_lanes == 2 else VTopology.TORUS
        return cls(n_lanes, length, HBoundary.PERIODIC, topo)

    @classmethod
    def closed(cls, half_width: int, n_lanes: int = 2) -> "LaneGeometry":
        topo = VTopology.TWO_LANE if n_lanes == 2 else VTopology.TORUS
        return cls(n_lanes, 2 * half_width + 1, HBoundary.CLOSED, topo)

    @property
    def periodic(self) -> bool:
        return self.h_boundary is HBoundary.PERIODIC

    @property
    def z_min(self) -> int:
        return 0 if self.periodic else -(self.length // 2)

    @property
    def z_max(self) -> int:
        return self.z_min + self.length - 1

    @property
    def columns(self) -> np.ndarray:
        return np.arange(self.z_min, self.z_max + 1)

    def index(self, z: int) -> int:
        """Array index of column ``z``; rings wrap, closed windows do not."""
        if self.periodic:
            return int(z) % self.length
        if not self.z_min <= z <= self.z_max:
            raise IndexError(f"column {z} outside window [{self.z_min}, {self.z_max}]")
        return int(z) - self.z_min

    def to_dict(self) -> dict:
        return {
            "n_lanes": self.n_lanes,
            "length": self.length,
            "h_boundary": self.h_boundary.value,
            "v_topology": self.v_topology.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LaneGeometry":
        return cls(int(d["n_lanes"]), int(d["length"]), d["h_boundary"], d["v_topology"])

    @classmethod
    def parse(cls, text: str) -> "LaneGeometry":
        """Parse ``LxN:periodic|closed[:torus|two_lane]``, e.g. ``61x2:closed``."""
        parts = text.strip().lower().split(":")
        try:
            length, n_lanes = (int(v) for v in parts[0].split("x"))
        except ValueError:
            raise ValueError(f"bad geometry {text!r}; expected LxN:periodic|closed") from None
        boundary = HBoundary(parts[1]) if len(parts) > 1 else HBoundary.PERIODIC
        if len(parts) > 2:
            topo = VTopology(parts[2])
        else:
            topo = VTopology.TWO_LANE if n_lanes == 2 else VTopology.TORUS
        return cls(n_lanes, length, boundary, topo)


class Config:
    """Occupancy snapshot on a window; ``occ[i, k]`` is lane ``i`` at column ``z_min + k``.

    Instances are read-only. The simulator works on private copies of ``occ``.
    """

    __slots__ = ("geometry", "occ")

    def __init__(self, geometry: LaneGeometry, occ):
        occ = np.array(occ, dtype=np.uint8, copy=True)
        if occ.shape != (geometry.n_lanes, geometry.length):
            raise ValueError(
                f"occupancy shape {occ.shape} != ({geometry.n_lanes}, {geometry.length})"
            )
        if occ.size and occ.max() > 1:
            raise ValueError("occupancy values must be 0 or 1")
        occ.setflags(write=False)
        self.geometry = geometry
        self.occ = occ

    @classmethod
    def empty(cls, geometry: LaneGeometry) -> "Config":
        return cls(geometry, np.zeros((geometry.n_lanes, geometry.length), np.uint8))

    @classmethod
    def full(cls, geometry: LaneGeometry) -> "Config":
        return cls(geometry, np.ones((geometry.n_lanes, geometry.length), np.uint8))

    @classmethod
    def from_sites(cls, geometry: LaneGeometry, sites: Iterable[tuple[int, int]]) -> "Config":
        occ = np.zeros((geometry.n_lanes, geometry.length), np.uint8)
        for z, i in sites:
            occ[i, geometry.index(z)] = 1
        return cls(geometry, occ)

    def __getitem__(self, site: tuple[int, int]) -> int:
        z, i = site
        return int(self.occ[i, self.geometry.index(z)])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Config)
            and self.geometry == other.geometry
            and np.array_equal(self.occ, other.occ)
        )

    def __hash__(self):
        return hash((self.geometry, self.occ.tobytes()))

    def __repr__(self) -> str:
        lanes = ",".join("".join(map(str, row)) for row in self.occ)
        return f"Config({self.geometry.length}x{self.geometry.n_lanes}, [{lanes}])"

    def with_sites(self, sites: Iterable[tuple[int, int]], value: int = 1) -> "Config":
        occ = self.occ.copy()
        for z, i in sites:
            occ[i, self.geometry.index(z)] = value
        return Config(self.geometry, occ)

    @property
    def n_particles(self) -> int:
        return int(self.occ.sum())

    def to_json(self) -> dict:
        return {
            "geometry": self.geometry.to_dict(),
            "lanes": ["".join("1" if v else "0" for v in row) for row in self.occ],
        }

    @classmethod
    def from_json(cls, obj) -> "Config":
        if isinstance(obj, str):
            obj = json.loads(obj)
        geometry = LaneGeometry.from_dict(obj["geometry"])
        lanes = obj["lanes"]
        if len(lanes) != geometry.n_lanes or any(len(s) != geometry.length for s in lanes):
            raise ValueError("lane bitstrings do not match geometry")
        if any(set(s) - {"0", "1"} for s in lanes):
            raise ValueError("lane bitstrings must contain only 0/1")
        occ = np.array([[c == "1" for c in s] for s in lanes], dtype=np.uint8)
        return cls(geometry, occ)


def lane_view(config: Config, i: int) -> np.ndarray:
    """Occupancies of lane ``i`` across the window, leftmost column first."""
    if not 0 <= i < config.geometry.n_lanes:
        raise IndexError(f"lane {i} out of range [0, {config.geometry.n_lanes})")
    return config.occ[i]


def column_sum(config: Config, z: int) -> int:
    """Number of occupied lanes at column ``z``."""
    g = config.geometry
    if not g.z_min <= z <= g.z_max:
        raise IndexError(f"column {z} outside window [{g.z_min}, {g.z_max}]")
    return int(config.occ[:, z - g.z_min].sum())


def column_sums(config: Config) -> np.ndarray:
    return config.occ.sum(axis=0, dtype=np.int64)


def H2(config: Config, origin: int = 0) -> int:
    """Particles at or left of ``origin`` minus holes right of it (closed windows only)."""
    g = config.geometry
    if g.periodic:
        raise ValueError("H2 is undefined on a periodic window")
    if not g.z_min <= origin <= g.z_max:
        raise IndexError(f"origin {origin} outside window")
    k = origin - g.z_min + 1
    bars = column_sums(config)
    return int(bars[:k].sum() - (g.n_lanes * (g.length - k) - bars[k:].sum()))


def H2_batch(occ: np.ndarray, geometry: LaneGeometry, origin: int = 0) -> np.ndarray:
    """Vectorised ``H2`` over a stack of occupancy arrays of shape (R, n, L)."""
    k = origin - geometry.z_min + 1
    left = occ[..., :k].sum(axis=(-2, -1), dtype=np.int64)
    right = occ[..., k:].sum(axis=(-2, -1), dtype=np.int64)
    return left - (geometry.n_lanes * (geometry.length - k) - right)


def step_lane(geometry: LaneGeometry, n: float) -> np.ndarray:
    """Single-lane step ``1{z > n}`` over the window; ``n = +inf`` is empty, ``-inf`` full."""
    return (geometry.columns > n).astype(np.uint8)
