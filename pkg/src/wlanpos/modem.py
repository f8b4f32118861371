"""Chip-level DSSS modem: Barker spreading, DBPSK, pulse shaping.

Rates: 1 Mbps DBPSK, 11 Mchip/s Barker spreading, 2 samples per chip at the
22 MHz processing rate.  Differential encoding emits a leading reference
symbol, so N bits become N+1 symbols and the demodulator's N differential
decisions recover all N bits.
"""

from dataclasses import dataclass

import numpy as np

from . import frames
from .resample import Resampler

BARKER = np.array([1, -1, 1, 1, -1, 1, 1, 1, -1, -1, -1], dtype=np.float32)

CHIP_RATE = 11e6
BIT_RATE = 1e6
CHIPS_PER_SYMBOL = 11
SAMPLES_PER_CHIP = 2          # at the 22 MHz processing rate
PROC_RATE = 22e6
CAPTURE_RATE = 25e6

SYNC_CHIP_COUNT = frames.SYNC_BIT_COUNT * CHIPS_PER_SYMBOL          # 1408
SYNC_SAMPLE_COUNT = SYNC_CHIP_COUNT * SAMPLES_PER_CHIP              # 2816


@dataclass
class ChipSequence:
    """Chips at 11 Mchip/s, possibly oversampled."""

    chips: np.ndarray
    oversample_factor: int = 1


def differential_encode(bits) -> np.ndarray:
    """DBPSK encode: bit 0 keeps the phase, bit 1 flips it.  Output has a
    leading +1 reference symbol, length len(bits) + 1."""
    bits = np.asarray(bits, dtype=np.int8)
    flips = 1 - 2 * bits.astype(np.float32)
    return np.concatenate([[np.float32(1.0)], np.cumprod(flips)])


def barker_spread(bits) -> ChipSequence:
    """Differentially encode and spread each symbol by the Barker word."""
    symbols = differential_encode(bits)
    chips = (symbols[:, None] * BARKER[None, :]).ravel()
    return ChipSequence(chips=chips, oversample_factor=1)


def barker_despread(chips, chip_offset: int = 0) -> np.ndarray:
    """Correlate successive 11-chip windows against the Barker word.

    Input must be at chip rate (one sample per chip); output is one complex
    symbol per 11 chips, scaled by 1/11 so ideal symbols have unit magnitude.
    """
    chips = np.asarray(chips)
    if chip_offset:
        chips = chips[chip_offset:]
    n_sym = chips.size // CHIPS_PER_SYMBOL
    if n_sym == 0:
        return np.zeros(0, dtype=np.complex64)
    blocks = chips[: n_sym * CHIPS_PER_SYMBOL].reshape(n_sym, CHIPS_PER_SYMBOL)
    return (blocks @ BARKER.astype(blocks.dtype)) / np.float32(CHIPS_PER_SYMBOL)


def dbpsk_demod(symbols) -> np.ndarray:
    """Differential decisions: bit k is 1 when symbol k+1 flipped phase
    relative to symbol k.  N symbols yield N-1 bits."""
    symbols = np.asarray(symbols)
    if symbols.size < 2:
        raise ValueError("DBPSK demodulation needs at least 2 symbols")
    metric = np.real(symbols[1:] * np.conj(symbols[:-1]))
    return (metric < 0).astype(np.uint8)


def matched_filter_taps(rolloff: float = 0.7, n_taps: int = 9,
                        sps: int = SAMPLES_PER_CHIP) -> np.ndarray:
    """Truncated root-raised-cosine chip filter, unit DC gain.

    n_taps is odd so the group delay is an integer (n_taps - 1) / 2 samples.
    """
    if n_taps % 2 == 0:
        raise ValueError("matched filter length must be odd")
    t = (np.arange(n_taps) - (n_taps - 1) / 2) / sps  # in chip periods
    b = rolloff
    h = np.empty(n_taps)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-9:
            h[i] = 1.0 - b + 4 * b / np.pi
        elif abs(abs(ti) - 1 / (4 * b)) < 1e-9:
            h[i] = (b / np.sqrt(2)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
            )
        else:
            num = np.sin(np.pi * ti * (1 - b)) + 4 * b * ti * np.cos(np.pi * ti * (1 + b))
            den = np.pi * ti * (1 - (4 * b * ti) ** 2)
            h[i] = num / den
    return (h / h.sum()).astype(np.float32)


def pulse_shape(chips: ChipSequence, sps: int = SAMPLES_PER_CHIP) -> np.ndarray:
    """Rectangular chip pulses: hold each chip for sps samples."""
    return np.repeat(chips.chips, sps)


_SYNC_REF_22M = None


def sync_reference_22m() -> np.ndarray:
    """First 128 us of any long-preamble PPDU at 22 MHz (detection template)."""
    global _SYNC_REF_22M
    if _SYNC_REF_22M is None:
        ppdu = frames.build_beacon("", b"\x00" * 6)
        wave = tx_waveform(ppdu, sample_rate=PROC_RATE)
        _SYNC_REF_22M = np.ascontiguousarray(wave[:SYNC_SAMPLE_COUNT])
        _SYNC_REF_22M.setflags(write=False)
    return _SYNC_REF_22M


_SYNC_REF_CHIPS = None


def sync_reference_chips() -> np.ndarray:
    """Known chip-rate SYNC span (reference symbol + 127 SYNC symbols)."""
    global _SYNC_REF_CHIPS
    if _SYNC_REF_CHIPS is None:
        scrambled = frames.scramble(np.ones(frames.SYNC_BIT_COUNT, dtype=np.uint8))
        chips = barker_spread(scrambled).chips
        _SYNC_REF_CHIPS = np.ascontiguousarray(chips[:SYNC_CHIP_COUNT]).astype(np.complex64)
        _SYNC_REF_CHIPS.setflags(write=False)
    return _SYNC_REF_CHIPS


def sync_reference_symbols() -> np.ndarray:
    """Known SYNC-span DBPSK symbols (despread domain)."""
    scrambled = frames.scramble(np.ones(frames.SYNC_BIT_COUNT, dtype=np.uint8))
    return differential_encode(scrambled)[: frames.SYNC_BIT_COUNT].astype(np.complex64)


def tx_waveform(frame_bits, sample_rate: float = PROC_RATE) -> np.ndarray:
    """Modulate pre-scrambling PPDU bits into a complex baseband waveform.

    scramble -> DBPSK (with reference symbol) -> Barker spread -> rectangular
    chips at 22 MHz -> optional 22->25 MHz resampling.
    """
    if sample_rate not in (PROC_RATE, CAPTURE_RATE):
        raise ValueError("sample_rate must be 22e6 or 25e6")
    scrambled = frames.scramble(np.asarray(frame_bits, dtype=np.uint8))
    chips = barker_spread(scrambled)
    wave = pulse_shape(chips).astype(np.complex64)
    if sample_rate == CAPTURE_RATE:
        wave = Resampler(25, 22).apply(wave)
    return wave
