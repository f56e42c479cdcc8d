"""5G NR numerology, frame timing, resource-grid capacity and message sizing.

Everything here is a pure function over frozen dataclasses.  Times are
expressed in OFDM symbols / mini-slots of the configured subcarrier spacing
and converted to milliseconds at the edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

SUBCARRIERS_PER_RB = 12
SYMBOLS_PER_SLOT = 14
SYMBOLS_PER_MINISLOT = 7
MINISLOTS_PER_SRP = 8

# Inside one 7-symbol data mini-slot: payload, half-duplex turnaround, ACK.
DATA_SYMBOLS = 4
TURNAROUND_SYMBOLS = 1
ACK_SYMBOLS = 2

SUPPORTED_SCS_KHZ = (30, 60, 120)
SUPPORTED_MOD_ORDERS = (4, 64, 256)
CONTROL_MOD_ORDER = 4  # PUCCH/PDCCH/HARQ-ACK always use the most robust order


class ConfigurationError(ValueError):
    """Raised when a radio configuration cannot be realised."""


@dataclass(frozen=True)
class Numerology:
    """Subcarrier spacing and the slot/mini-slot grid it induces."""

    scs_khz: int

    def __post_init__(self) -> None:
        if self.scs_khz not in SUPPORTED_SCS_KHZ:
            raise ConfigurationError(
                f"unsupported subcarrier spacing {self.scs_khz} kHz; "
                f"supported: {SUPPORTED_SCS_KHZ}"
            )

    @property
    def mu(self) -> int:
        # scs = 15 * 2^mu kHz, so mu is 1, 2 or 3 for the supported values
        return int(round(math.log2(self.scs_khz / 15.0)))

    def slot_duration_ms(self) -> float:
        return 1.0 / (1 << self.mu)

    def symbol_duration_ms(self) -> float:
        return self.slot_duration_ms() / SYMBOLS_PER_SLOT

    def minislot_duration_ms(self) -> float:
        # 7 symbols = half a 14-symbol slot; exact in binary floating point
        return self.slot_duration_ms() / 2.0


def srp_duration_ms(numerology: Numerology) -> float:
    """Duration of one scheduling resource period (8 mini-slots)."""
    return MINISLOTS_PER_SRP * numerology.minislot_duration_ms()


@dataclass(frozen=True)
class RadioConfig:
    """Radio parameters of one simulated deployment.

    bandwidth_hz: overall system bandwidth B
    numerology:   subcarrier spacing wrapper
    mod_order:    modulation order M used for PUSCH/PDSCH
    header_bytes: protocol-stack overhead added to every payload
    """

    bandwidth_hz: float
    numerology: Numerology
    mod_order: int = 256
    header_bytes: int = 72
    ul_payload_bytes: int = 32
    dl_payload_bytes: int = 1

    def __post_init__(self) -> None:
        if self.bandwidth_hz <= 0:
            raise ConfigurationError("bandwidth must be positive")
        if self.mod_order not in SUPPORTED_MOD_ORDERS:
            raise ConfigurationError(
                f"unsupported modulation order {self.mod_order}; "
                f"supported: {SUPPORTED_MOD_ORDERS}"
            )
        if self.header_bytes < 0:
            raise ConfigurationError("header_bytes must be >= 0")
        if self.ul_payload_bytes < 1 or self.dl_payload_bytes < 1:
            raise ConfigurationError("payloads must be at least 1 byte")

    @property
    def scs_khz(self) -> int:
        return self.numerology.scs_khz


def n_rb(config: RadioConfig) -> int:
    """Number of resource blocks the bandwidth is split into.

    floor(B / (12 * scs)); a configuration that yields zero blocks is
    rejected because not even one message fits the grid.
    """
    rb_width_hz = SUBCARRIERS_PER_RB * config.numerology.scs_khz * 1e3
    count = int(math.floor(config.bandwidth_hz / rb_width_hz))
    if count < 1:
        raise ConfigurationError(
            f"bandwidth {config.bandwidth_hz:.0f} Hz too small for one RB "
            f"at {config.numerology.scs_khz} kHz spacing"
        )
    return count


def tb_bytes_per_rb(mod_order: int, symbol_count: int = DATA_SYMBOLS) -> int:
    """Bytes carried by a one-RB allocation of `symbol_count` symbols.

    12 subcarriers x symbols x log2(M) bits, 8 bits per byte.  Integer by
    construction for the supported modulation orders.
    """
    if mod_order not in SUPPORTED_MOD_ORDERS:
        raise ConfigurationError(f"unsupported modulation order {mod_order}")
    if symbol_count < 1:
        raise ConfigurationError("symbol_count must be >= 1")
    bits = SUBCARRIERS_PER_RB * symbol_count * int(math.log2(mod_order))
    return bits // 8


def pdu_bytes(payload_bytes: int, config: RadioConfig) -> int:
    """PHY PDU size: payload plus the fixed protocol-stack header."""
    if payload_bytes < 1:
        raise ConfigurationError("payload must be at least 1 byte")
    return payload_bytes + config.header_bytes


def rbs_for_pdu(pdu_size_bytes: int, mod_order: int) -> int:
    """Resource blocks (1-RB data messages) needed to carry one PDU."""
    if pdu_size_bytes < 1:
        raise ConfigurationError("PDU must be at least 1 byte")
    per_rb = tb_bytes_per_rb(mod_order, DATA_SYMBOLS)
    return -(-pdu_size_bytes // per_rb)


_MESSAGE_GEOMETRY = {
    # kind: (rb_count fixed or None for >=1, symbol_count)
    "PUCCH": (1, SYMBOLS_PER_MINISLOT),
    "PDCCH": (1, SYMBOLS_PER_MINISLOT),
    "PUSCH": (None, DATA_SYMBOLS),
    "PDSCH": (None, DATA_SYMBOLS),
    "HARQ_ACK": (1, ACK_SYMBOLS),
}


@dataclass(frozen=True)
class MessageSpec:
    """Geometry of one physical channel message."""

    kind: str
    rb_count: int
    symbol_count: int

    def __post_init__(self) -> None:
        if self.kind not in _MESSAGE_GEOMETRY:
            raise ConfigurationError(f"unknown message kind {self.kind!r}")
        fixed_rb, symbols = _MESSAGE_GEOMETRY[self.kind]
        if self.symbol_count != symbols:
            raise ConfigurationError(
                f"{self.kind} occupies {symbols} symbols, got {self.symbol_count}"
            )
        if fixed_rb is not None and self.rb_count != fixed_rb:
            raise ConfigurationError(
                f"{self.kind} occupies {fixed_rb} RB, got {self.rb_count}"
            )
        if self.rb_count < 1:
            raise ConfigurationError("rb_count must be >= 1")


def message(kind: str, rb_count: int | None = None) -> MessageSpec:
    fixed_rb, symbols = _MESSAGE_GEOMETRY[kind]
    if rb_count is None:
        rb_count = fixed_rb if fixed_rb is not None else 1
    return MessageSpec(kind=kind, rb_count=rb_count, symbol_count=symbols)
