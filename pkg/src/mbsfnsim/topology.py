"""Hexagonal cell layout, user drop and vehicle mobility.

The layout is a hexagonal grid centred at the origin: an inner group of
cells transmits the common multicast signal, the surrounding ring(s) act
as interference sources only.  Users are dropped uniformly inside their
cell's hexagon; car users move in a straight line at constant speed and
wrap around the layout boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Cell hexagons tile the plane with centres one inter-site distance apart:
# inradius = isd / 2, circumradius = isd / sqrt(3).
_HEX_AXES_DEG = (0.0, 60.0, 120.0)


class ConfigurationError(ValueError):
    """Raised for invalid layout or drop parameters."""


@dataclass(frozen=True)
class CellLayout:
    cell_positions: np.ndarray          # (n_cells, 2) metres
    mbsfn_cells: frozenset[int]
    inter_site_distance: float

    @property
    def n_cells(self) -> int:
        return self.cell_positions.shape[0]

    @property
    def interference_cells(self) -> frozenset[int]:
        return frozenset(range(self.n_cells)) - self.mbsfn_cells

    @property
    def boundary_radius(self) -> float:
        """Radius of the disc that contains every cell hexagon."""
        centre_dist = float(np.max(np.hypot(*self.cell_positions.T)))
        return centre_dist + self.inter_site_distance / math.sqrt(3.0)


@dataclass
class UserPopulation:
    """Flat arrays indexed by user id; cars come first within each cell."""
    layout: CellLayout
    kinds: np.ndarray                   # (n_users,) "car" / "ordinary"
    serving_cell: np.ndarray            # (n_users,) int
    positions: np.ndarray               # (n_users, 2) metres
    velocities: np.ndarray              # (n_users, 2) m/s
    drop_cell: np.ndarray = field(default=None)  # cell each user was dropped in

    def __post_init__(self):
        if self.drop_cell is None:
            self.drop_cell = self.serving_cell.copy()

    @property
    def n_users(self) -> int:
        return len(self.kinds)

    def car_ids(self) -> np.ndarray:
        return np.flatnonzero(self.kinds == "car")

    def ordinary_ids(self) -> np.ndarray:
        return np.flatnonzero(self.kinds == "ordinary")

    def copy(self) -> "UserPopulation":
        return UserPopulation(
            layout=self.layout,
            kinds=self.kinds.copy(),
            serving_cell=self.serving_cell.copy(),
            positions=self.positions.copy(),
            velocities=self.velocities.copy(),
            drop_cell=self.drop_cell.copy(),
        )


def hex_ring_offsets(ring: int) -> list[tuple[int, int]]:
    """Axial coordinates of the cells in hexagonal ring `ring` (6*ring cells)."""
    if ring == 0:
        return [(0, 0)]
    # Walk the ring starting from (ring, 0), turning through the six axial
    # directions; this yields a deterministic, angle-ordered enumeration.
    directions = [(-1, 1), (-1, 0), (0, -1), (1, -1), (1, 0), (0, 1)]
    q, r = ring, 0
    cells = []
    for dq, dr in directions:
        for _ in range(ring):
            cells.append((q, r))
            q, r = q + dq, r + dr
    return cells


def _axial_to_xy(q: int, r: int, isd: float) -> tuple[float, float]:
    return isd * (q + r / 2.0), isd * (math.sqrt(3.0) / 2.0) * r


def build_layout(n_mbsfn_rings: int, n_interference_rings: int,
                 inter_site_distance: float) -> CellLayout:
    """Hexagonal grid: rings 0..n_mbsfn_rings form the multicast area, the
    next n_interference_rings rings are interference-only cells."""
    if n_mbsfn_rings < 0:
        raise ConfigurationError("n_mbsfn_rings must be >= 0")
    if n_interference_rings < 1:
        raise ConfigurationError("need at least one interference ring")
    if inter_site_distance <= 0:
        raise ConfigurationError("inter-site distance must be positive")

    positions = []
    mbsfn = set()
    cid = 0
    for ring in range(n_mbsfn_rings + n_interference_rings + 1):
        for q, r in hex_ring_offsets(ring):
            positions.append(_axial_to_xy(q, r, inter_site_distance))
            if ring <= n_mbsfn_rings:
                mbsfn.add(cid)
            cid += 1
    return CellLayout(
        cell_positions=np.asarray(positions, dtype=float),
        mbsfn_cells=frozenset(mbsfn),
        inter_site_distance=float(inter_site_distance),
    )


def point_in_hexagon(point: np.ndarray, centre: np.ndarray, isd: float) -> bool:
    """True if `point` lies in the cell hexagon centred at `centre`."""
    d = np.asarray(point, dtype=float) - np.asarray(centre, dtype=float)
    for deg in _HEX_AXES_DEG:
        a = math.radians(deg)
        if abs(d[0] * math.cos(a) + d[1] * math.sin(a)) > isd / 2.0 + 1e-9:
            return False
    return True


def _sample_in_hexagon(rng: np.random.Generator, centre: np.ndarray,
                       isd: float) -> np.ndarray:
    circum = isd / math.sqrt(3.0)
    while True:
        p = centre + rng.uniform(-circum, circum, size=2)
        if point_in_hexagon(p, centre, isd):
            return p


def drop_users(layout: CellLayout, n_users_per_cell: int, n_cars_per_cell: int,
               car_speed: float, rng_seed: int) -> UserPopulation:
    """Uniform random drop inside each cell hexagon; deterministic per seed.

    Within each cell the first n_cars_per_cell users are cars with a uniform
    random heading at `car_speed` m/s, the rest are static ordinary users.
    """
    if n_cars_per_cell > n_users_per_cell:
        raise ConfigurationError("car count exceeds user count per cell")
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 0x0D0]))
    kinds, serving, pos, vel = [], [], [], []
    for cell_id in range(layout.n_cells):
        centre = layout.cell_positions[cell_id]
        for k in range(n_users_per_cell):
            p = _sample_in_hexagon(rng, centre, layout.inter_site_distance)
            if k < n_cars_per_cell:
                heading = rng.uniform(0.0, 2.0 * math.pi)
                v = car_speed * np.array([math.cos(heading), math.sin(heading)])
                kinds.append("car")
            else:
                v = np.zeros(2)
                kinds.append("ordinary")
            serving.append(cell_id)
            pos.append(p)
            vel.append(v)
    return UserPopulation(
        layout=layout,
        kinds=np.asarray(kinds, dtype=object),
        serving_cell=np.asarray(serving, dtype=np.int64),
        positions=np.asarray(pos, dtype=float),
        velocities=np.asarray(vel, dtype=float),
    )


def _distance_gain_db(positions: np.ndarray, layout: CellLayout) -> np.ndarray:
    """Default serving-cell metric: pure distance pathloss (monotone)."""
    d = np.linalg.norm(positions[:, None, :] - layout.cell_positions[None, :, :],
                       axis=2)
    return -d


def advance_mobility(pop: UserPopulation, dt: float,
                     gain_db_fn=None) -> UserPopulation:
    """Move cars by velocity*dt, wrap at the layout boundary and re-select
    each car's serving cell as the strongest-gain cell.

    `gain_db_fn(user_ids, positions) -> (n, n_cells)` supplies the macroscopic
    gain used for cell reselection; the default is distance-based (pathloss
    only).  Handover is instantaneous and cost-free.
    """
    if dt < 0:
        raise ConfigurationError("dt must be >= 0")
    out = pop.copy()
    if dt == 0:
        return out
    moving = np.flatnonzero(np.any(out.velocities != 0.0, axis=1))
    if moving.size == 0:
        return out
    out.positions[moving] += out.velocities[moving] * dt

    # Wrap-around: a car crossing the boundary disc re-enters on the
    # antipodal side, keeping its heading.
    radius = out.layout.boundary_radius
    dist = np.hypot(*out.positions[moving].T)
    outside = dist > radius
    if np.any(outside):
        idx = moving[outside]
        unit = out.positions[idx] / dist[outside, None]
        out.positions[idx] -= 2.0 * radius * unit

    gains = (gain_db_fn(moving, out.positions[moving]) if gain_db_fn is not None
             else _distance_gain_db(out.positions[moving], out.layout))
    out.serving_cell[moving] = np.argmax(gains, axis=1)
    return out
