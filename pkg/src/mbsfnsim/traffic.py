"""Periodic awareness-message traffic and per-source transmit buffers.

Each car emits a fixed-size packet every `period` TTIs starting at a
random per-car offset.  A buffer holds the residual bits of the packet
currently in flight; a fresh generation always replaces an undelivered
predecessor (receivers cannot splice halves of different messages), so
the residual resets to the full packet size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_PACKET_BITS = 2400      # 300-byte awareness message
DEFAULT_PERIOD_TTIS = 100       # 10 Hz generation at 1 ms TTIs


@dataclass(frozen=True)
class CamPacket:
    source_user_id: int
    sequence: int
    generation_tti: int
    size_bits: int


@dataclass
class UserBuffer:
    user_id: int
    offset: int                         # generation phase in [0, period)
    period: int = DEFAULT_PERIOD_TTIS
    packet_bits: int = DEFAULT_PACKET_BITS
    residual_bits: float = 0.0
    active_packet: CamPacket | None = None
    next_sequence: int = 0

    @property
    def empty(self) -> bool:
        return self.active_packet is None or self.residual_bits <= 0


def draw_offsets(n_sources: int, period: int, seed) -> np.ndarray:
    """Uniform generation offsets in [0, period), deterministic per seed."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7AF]))
    return rng.integers(0, period, size=n_sources)


def maybe_generate(buffer: UserBuffer, tti: int) -> CamPacket | None:
    """Emit a new packet when the TTI hits the buffer's generation phase.

    An undelivered predecessor is replaced outright: its partial progress is
    discarded and the residual resets to the full packet size.  Latency
    accounting for replaced packets continues in the metrics layer.
    """
    if tti < 0:
        raise ValueError("tti must be >= 0")
    if (tti - buffer.offset) % buffer.period != 0 or tti < buffer.offset:
        return None
    packet = CamPacket(
        source_user_id=buffer.user_id,
        sequence=buffer.next_sequence,
        generation_tti=tti,
        size_bits=buffer.packet_bits,
    )
    buffer.active_packet = packet
    buffer.residual_bits = float(buffer.packet_bits)
    buffer.next_sequence += 1
    return packet


def consume(buffer: UserBuffer, transmitted_bits: float, decode_ok: bool) -> None:
    """Drain the buffer by a successfully carried transport block.

    Failed blocks leave the residual untouched: there is no retransmission
    credit, the same bits simply remain to be sent later.
    """
    if transmitted_bits < 0:
        raise ValueError("transmitted bits must be >= 0")
    if decode_ok:
        buffer.residual_bits = max(buffer.residual_bits - transmitted_bits, 0.0)
