"""Subframe reservation, multicast CQI selection and RB allocation.

Multicast traffic rides in subframes reserved out of each 10-subframe
radio frame (at most six: the remaining four carry sync/paging and stay
unicast).  Pending messages are served oldest-first; leftover RBs roll
to the next pending message, and a reserved subframe with nothing to
send can be handed back to ordinary unicast traffic.  The baseline mode
instead delivers every message separately to each recipient through the
recipient's own serving cell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Subframes 0, 4, 5 and 9 carry synchronization and paging.
MBSFN_LEGAL_SUBFRAMES = (1, 2, 3, 6, 7, 8)
SUBFRAMES_PER_FRAME = 10

DEFAULT_N_RE_PER_RB = 100   # usable resource elements per RB, see README


class SchedulingError(RuntimeError):
    """Invalid scheduling state (e.g. no CQI reports in adaptive mode)."""


class CongestionInfeasibleError(ValueError):
    """The offered multicast load cannot fit the legal reservation."""


@dataclass(frozen=True)
class FramePlan:
    reserved_subframes: tuple[int, ...]
    n_rb_per_subframe: int
    n_re_per_rb: int

    def __post_init__(self):
        if len(self.reserved_subframes) > len(MBSFN_LEGAL_SUBFRAMES):
            raise SchedulingError("more than six reserved subframes per frame")
        if not set(self.reserved_subframes) <= set(MBSFN_LEGAL_SUBFRAMES):
            raise SchedulingError("reserved subframes outside the legal set")

    def is_reserved(self, tti: int) -> bool:
        return (tti % SUBFRAMES_PER_FRAME) in self.reserved_subframes


def build_frame_plan(n_reserved_per_frame: int, n_rb_per_subframe: int,
                     n_re_per_rb: int = DEFAULT_N_RE_PER_RB) -> FramePlan:
    return FramePlan(
        reserved_subframes=MBSFN_LEGAL_SUBFRAMES[:n_reserved_per_frame],
        n_rb_per_subframe=n_rb_per_subframe,
        n_re_per_rb=n_re_per_rb,
    )


@dataclass
class CqiState:
    mode: str                            # "fixed" | "adaptive"
    fixed_cqi: int = 0
    cqi_bound: int = 0
    cqi_reports: np.ndarray = field(default_factory=lambda: np.array([], int))


def select_mbsfn_cqi(state: CqiState) -> int:
    """Transmission CQI: the worst report, clamped below by the bound."""
    if state.mode == "fixed":
        return state.fixed_cqi
    if len(state.cqi_reports) == 0:
        raise SchedulingError("adaptive CQI selection without reports")
    return max(int(np.min(state.cqi_reports)), state.cqi_bound)


def required_subframes(packet_bits: float, n_mbms_users: int,
                       n_rb_per_subframe: int, n_re_per_rb: int,
                       efficiency: float, period_ttis: int) -> int:
    """Minimum reserved subframes per radio frame so that one generation
    period's worth of messages fits the reservation."""
    if min(packet_bits, n_rb_per_subframe, n_re_per_rb, efficiency,
           period_ttis) <= 0:
        raise ValueError("all sizing arguments must be positive")
    if n_mbms_users <= 0:
        return 0
    bits_per_subframe = n_rb_per_subframe * n_re_per_rb * efficiency
    subframes_per_period = packet_bits * n_mbms_users / bits_per_subframe
    frames_per_period = period_ttis / SUBFRAMES_PER_FRAME
    per_frame = math.ceil(subframes_per_period / frames_per_period - 1e-12)
    if per_frame > len(MBSFN_LEGAL_SUBFRAMES):
        raise CongestionInfeasibleError(
            f"need {per_frame} subframes/frame, only "
            f"{len(MBSFN_LEGAL_SUBFRAMES)} are reservable")
    return per_frame


@dataclass(frozen=True)
class Allocation:
    key: object                 # caller-defined identity of the queue item
    rb_start: int
    rb_count: int
    capacity_bits: float        # transport-block capacity of the allocation


def allocate_fifo(items, n_rb: int, n_re_per_rb: int) -> tuple[list[Allocation], int]:
    """Serve (key, residual_bits, efficiency) items in order until RBs run out.

    Each item gets ceil(residual / per-RB capacity) RBs, capped by what is
    left; leftover RBs stay with the next pending item.
    """
    allocations: list[Allocation] = []
    rb_next = 0
    for key, residual, efficiency in items:
        if rb_next >= n_rb:
            break
        if residual <= 0:
            continue
        per_rb = n_re_per_rb * efficiency
        want = math.ceil(residual / per_rb - 1e-12)
        take = min(want, n_rb - rb_next)
        allocations.append(Allocation(key, rb_next, take, take * per_rb))
        rb_next += take
    return allocations, rb_next


def schedule_multicast(pending, n_rb: int, n_re_per_rb: int,
                       efficiency: float) -> tuple[list[Allocation], int, bool]:
    """Allocate one reserved subframe to pending messages, oldest first.

    `pending` is an ordered sequence of (key, residual_bits).  Returns the
    allocations, the RB count used, and whether the subframe was left fully
    unused (and may be reassigned to ordinary traffic).
    """
    items = [(key, residual, efficiency) for key, residual in pending]
    allocations, used = allocate_fifo(items, n_rb, n_re_per_rb)
    return allocations, used, used == 0


def schedule_unicast_cam_baseline(pending, n_rb: int,
                                  n_re_per_rb: int) -> tuple[list[Allocation], int]:
    """Per-cell baseline queue: (key, residual_bits, efficiency) per copy,
    served oldest first, ahead of any ordinary traffic."""
    return allocate_fifo(pending, n_rb, n_re_per_rb)


def schedule_unicast_ordinary(user_ids, n_rb: int, rr_offset: int = 0
                              ) -> list[tuple[int, int, int]]:
    """Even round-robin split of a cell's RBs over its full-buffer users.

    Returns (user_id, rb_start, rb_count) triples; allocations differ by at
    most one RB, with the remainder rotating by `rr_offset`.
    """
    users = list(user_ids)
    if not users or n_rb <= 0:
        return [(u, 0, 0) for u in users]
    n = len(users)
    base, rem = divmod(n_rb, n)
    order = [users[(rr_offset + k) % n] for k in range(n)]
    out = []
    start = 0
    for k, user in enumerate(order):
        count = base + (1 if k < rem else 0)
        out.append((user, start, count))
        start += count
    return out
