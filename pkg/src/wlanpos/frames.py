"""Bit-exact 802.11b long-preamble PPDU and beacon MPDU construction/parsing.

Layout (all fields serialized LSB-first within octets):

    PPDU = SYNC(128 bits, scrambled ones) | SFD(16) |
           SIGNAL(8) | SERVICE(8) | LENGTH(16) | CRC16(16) |
           MPDU(LENGTH bits at 1 Mbps)

The whole PPDU passes through the self-synchronizing scrambler on transmit;
`build_beacon` returns the pre-scrambling bits.  Beacons are management
frames with frame-control type 0 / subtype 8.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from .bitops import bits_to_bytes, bits_to_int, bytes_to_bits, int_to_bits

# Scrambler register convention: bit i of a 7-bit state holds delay element
# Z(i+1); output = in ^ Z4 ^ Z7, and the scrambled output feeds the register.
# Long-preamble seed 1101100 (Z1..Z7) in this convention:
SCRAMBLER_SEED_LONG = 0x1B

SFD_LONG = 0xF3A0
SIGNAL_1MBPS = 0x0A
SERVICE_DEFAULT = 0x00

SYNC_BIT_COUNT = 128
PREAMBLE_BIT_COUNT = 144          # SYNC + SFD
HEADER_BIT_COUNT = 48
PLCP_BIT_COUNT = PREAMBLE_BIT_COUNT + HEADER_BIT_COUNT  # 192 us at 1 Mbps

BROADCAST_MAC = b"\xff\xff\xff\xff\xff\xff"

FC_TYPE_MANAGEMENT = 0
FC_SUBTYPE_BEACON = 8


class FrameError(Exception):
    """Base class for frame build/parse failures."""


class FcsMismatch(FrameError):
    pass


class NotABeacon(FrameError):
    pass


class TruncatedFrame(FrameError):
    pass


class SfdMismatch(FrameError):
    pass


class HeaderCrcError(FrameError):
    pass


class MalformedFrame(FrameError):
    pass


# ---------------------------------------------------------------------------
# Scrambler (polynomial x^7 + x^4 + 1, feed-through / self-synchronizing)
# ---------------------------------------------------------------------------

_SCR_OUT = None
_SCR_NEXT = None


def _scrambler_tables():
    """Byte-at-a-time tables: (state, byte) -> scrambled byte, next state."""
    global _SCR_OUT, _SCR_NEXT
    if _SCR_OUT is None:
        st = np.repeat(np.arange(128, dtype=np.int32)[:, None], 256, axis=1)
        byt = np.repeat(np.arange(256, dtype=np.int32)[None, :], 128, axis=0)
        out = np.zeros_like(st)
        for k in range(8):
            o = ((byt >> k) & 1) ^ ((st >> 3) & 1) ^ ((st >> 6) & 1)
            st = ((st << 1) | o) & 0x7F
            out |= o << k
        _SCR_OUT = out.astype(np.uint8)
        _SCR_NEXT = st.astype(np.uint8)
    return _SCR_OUT, _SCR_NEXT


def scramble(bits, seed: int = SCRAMBLER_SEED_LONG) -> np.ndarray:
    """Scramble a 0/1 bit array.  The output bit stream feeds the register,
    so a receiver can descramble without knowing the seed."""
    if not 0 < seed < 128:
        raise ValueError("scrambler seed must be a nonzero 7-bit value")
    bits = np.asarray(bits, dtype=np.uint8)
    out = np.empty_like(bits)
    tab_out, tab_next = _scrambler_tables()
    state = seed
    n_whole = bits.size // 8
    if n_whole:
        in_bytes = np.packbits(bits[: n_whole * 8], bitorder="little")
        out_bytes = np.empty(n_whole, dtype=np.uint8)
        for i, b in enumerate(in_bytes):
            out_bytes[i] = tab_out[state, b]
            state = tab_next[state, b]
        out[: n_whole * 8] = np.unpackbits(out_bytes, bitorder="little")
    for i in range(n_whole * 8, bits.size):
        o = bits[i] ^ ((state >> 3) & 1) ^ ((state >> 6) & 1)
        state = ((state << 1) | int(o)) & 0x7F
        out[i] = o
    return out


def descramble(bits, seed: int = SCRAMBLER_SEED_LONG) -> np.ndarray:
    """Inverse of scramble.  Feed-forward form out[i] = in[i] ^ in[i-4] ^ in[i-7],
    so a wrong seed only corrupts the first 7 output bits."""
    if not 0 < seed < 128:
        raise ValueError("scrambler seed must be a nonzero 7-bit value")
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size == 0:
        return bits.copy()
    # history holds the 7 most recent scrambled bits, oldest (Z7) first
    history = np.array([(seed >> k) & 1 for k in range(6, -1, -1)], dtype=np.uint8)
    ext = np.concatenate([history, bits])
    return ext[7:] ^ ext[3:-4] ^ ext[0:-7]


_SYNC_SCRAMBLED = None


def long_preamble_sync_bits() -> np.ndarray:
    """The canonical on-air SYNC: 128 ones through the long-preamble seed."""
    global _SYNC_SCRAMBLED
    if _SYNC_SCRAMBLED is None:
        _SYNC_SCRAMBLED = scramble(np.ones(SYNC_BIT_COUNT, dtype=np.uint8))
        _SYNC_SCRAMBLED.setflags(write=False)
    return _SYNC_SCRAMBLED


# ---------------------------------------------------------------------------
# CRCs
# ---------------------------------------------------------------------------

def crc16_ccitt(data: bytes) -> int:
    """CCITT CRC-16 as used by the PLCP header: preset ones, reflected
    polynomial 0x8408, ones-complement result (X.25 FCS)."""
    crc = 0xFFFF
    for byte in bytes(data):
        crc ^= byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ 0x8408
            else:
                crc >>= 1
    return crc ^ 0xFFFF


def crc32_fcs(data: bytes) -> int:
    """IEEE CRC-32 (reflected 0x04C11DB7, preset/final-xor ones) per the FCS."""
    return zlib.crc32(bytes(data)) & 0xFFFFFFFF


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeUnit:
    """Beacon timing unit: 1 TU = exactly 1024 us."""

    tu_count: int

    @property
    def microseconds(self) -> int:
        return 1024 * self.tu_count


@dataclass(frozen=True)
class PlcpPreamble:
    sync_bits: tuple
    sfd: int = SFD_LONG

    def validate(self):
        ref = long_preamble_sync_bits()
        if len(self.sync_bits) != SYNC_BIT_COUNT or not np.array_equal(
            np.asarray(self.sync_bits, dtype=np.uint8), ref
        ):
            raise SfdMismatch("SYNC bits are not the long-preamble pattern")
        if self.sfd != SFD_LONG:
            raise SfdMismatch(f"bad SFD 0x{self.sfd:04X}")


@dataclass(frozen=True)
class PlcpHeader:
    signal: int
    service: int
    length_us: int
    crc16: int

    def crc_input(self) -> bytes:
        return bytes(
            [self.signal, self.service, self.length_us & 0xFF, self.length_us >> 8]
        )

    def crc_ok(self) -> bool:
        return crc16_ccitt(self.crc_input()) == self.crc16

    def to_bits(self) -> np.ndarray:
        return np.concatenate(
            [
                int_to_bits(self.signal, 8),
                int_to_bits(self.service, 8),
                int_to_bits(self.length_us, 16),
                int_to_bits(self.crc16, 16),
            ]
        )

    @classmethod
    def build(cls, length_us: int, signal: int = SIGNAL_1MBPS,
              service: int = SERVICE_DEFAULT) -> "PlcpHeader":
        hdr = cls(signal, service, length_us, 0)
        return cls(signal, service, length_us, crc16_ccitt(hdr.crc_input()))

    @classmethod
    def from_bits(cls, bits) -> "PlcpHeader":
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.size != HEADER_BIT_COUNT:
            raise TruncatedFrame(f"PLCP header needs 48 bits, got {bits.size}")
        hdr = cls(
            signal=bits_to_int(bits[0:8]),
            service=bits_to_int(bits[8:16]),
            length_us=bits_to_int(bits[16:32]),
            crc16=bits_to_int(bits[32:48]),
        )
        if not hdr.crc_ok():
            raise HeaderCrcError("PLCP header CRC-16 mismatch")
        return hdr


@dataclass(frozen=True)
class BeaconMpdu:
    frame_control: int
    duration: int
    da: bytes
    sa: bytes
    bssid: bytes
    seq_ctrl: int
    timestamp: int
    beacon_interval: int
    capability: int
    ssid: str
    fcs: int

    @property
    def seq(self) -> int:
        return self.seq_ctrl >> 4


def mac_to_str(mac: bytes) -> str:
    return "-".join(f"{b:02X}" for b in mac)


def mac_from_str(text: str) -> bytes:
    parts = text.replace(":", "-").split("-")
    if len(parts) != 6:
        raise ValueError(f"bad MAC address {text!r}")
    return bytes(int(p, 16) for p in parts)


# ---------------------------------------------------------------------------
# Beacon build / parse
# ---------------------------------------------------------------------------

def build_beacon_mpdu(ssid: str, bssid: bytes, seq: int, timestamp: int,
                      interval_tu: int, capability: int = 0x0001,
                      extra_ies: bytes = b"") -> bytes:
    """Serialize a beacon MPDU (management header + body + FCS)."""
    ssid_bytes = ssid.encode("utf-8")
    if len(ssid_bytes) > 32:
        raise ValueError(f"SSID exceeds 32 bytes ({len(ssid_bytes)})")
    if not 0 <= interval_tu < 0x10000:
        raise ValueError("beacon interval must fit in 16 bits of TU")
    bssid = bytes(bssid)
    if len(bssid) != 6:
        raise ValueError("BSSID must be 6 bytes")
    fc = (FC_SUBTYPE_BEACON << 4) | (FC_TYPE_MANAGEMENT << 2)
    body = bytearray()
    body += fc.to_bytes(2, "little")
    body += (0).to_bytes(2, "little")                     # duration
    body += BROADCAST_MAC                                 # DA
    body += bssid                                         # SA
    body += bssid                                         # BSSID
    body += ((seq & 0xFFF) << 4).to_bytes(2, "little")    # seq control
    body += (timestamp & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    body += interval_tu.to_bytes(2, "little")
    body += capability.to_bytes(2, "little")
    body += bytes([0, len(ssid_bytes)]) + ssid_bytes      # SSID element
    body += bytes(extra_ies)
    fcs = crc32_fcs(bytes(body))
    return bytes(body) + fcs.to_bytes(4, "little")


def build_beacon(ssid: str, bssid: bytes, seq: int = 0, timestamp: int = 0,
                 interval_tu: int = 100, capability: int = 0x0001,
                 extra_ies: bytes = b"") -> np.ndarray:
    """Full PPDU bits (pre-scrambling): preamble | header | beacon MPDU.

    The LENGTH field equals the MPDU bit count, which at 1 Mbps DBPSK is the
    MPDU airtime in microseconds.
    """
    mpdu = build_beacon_mpdu(ssid, bssid, seq, timestamp, interval_tu,
                             capability, extra_ies)
    mpdu_bits = bytes_to_bits(mpdu)
    header = PlcpHeader.build(length_us=mpdu_bits.size)
    return np.concatenate(
        [
            np.ones(SYNC_BIT_COUNT, dtype=np.uint8),
            int_to_bits(SFD_LONG, 16),
            header.to_bits(),
            mpdu_bits,
        ]
    )


def parse_beacon(bits) -> BeaconMpdu:
    """Parse descrambled MPDU bits into a BeaconMpdu, verifying the FCS.

    Raises TruncatedFrame / FcsMismatch / NotABeacon / MalformedFrame.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 8:
        raise TruncatedFrame(f"MPDU bit count {bits.size} not byte-aligned")
    data = bits_to_bytes(bits)
    if len(data) < 42:  # 24 header + 12 fixed body + empty SSID IE + 4 FCS
        raise TruncatedFrame(f"MPDU of {len(data)} bytes is too short")
    fcs_stored = int.from_bytes(data[-4:], "little")
    if crc32_fcs(data[:-4]) != fcs_stored:
        raise FcsMismatch("frame check sequence mismatch")
    fc = int.from_bytes(data[0:2], "little")
    fc_type = (fc >> 2) & 0x3
    fc_subtype = (fc >> 4) & 0xF
    if fc_type != FC_TYPE_MANAGEMENT or fc_subtype != FC_SUBTYPE_BEACON:
        raise NotABeacon(f"frame type {fc_type} subtype {fc_subtype}")
    duration = int.from_bytes(data[2:4], "little")
    da, sa, bssid = data[4:10], data[10:16], data[16:22]
    seq_ctrl = int.from_bytes(data[22:24], "little")
    timestamp = int.from_bytes(data[24:32], "little")
    interval = int.from_bytes(data[32:34], "little")
    capability = int.from_bytes(data[34:36], "little")

    # walk information elements; take the SSID, skip anything else
    ssid = None
    pos, end = 36, len(data) - 4
    while pos < end:
        if pos + 2 > end:
            raise TruncatedFrame("information element header overruns frame")
        ie_id, ie_len = data[pos], data[pos + 1]
        if pos + 2 + ie_len > end:
            raise TruncatedFrame("information element body overruns frame")
        if ie_id == 0 and ssid is None:
            ssid = data[pos + 2: pos + 2 + ie_len].decode("utf-8", "replace")
        pos += 2 + ie_len
    if ssid is None:
        raise MalformedFrame("beacon carries no SSID element")
    return BeaconMpdu(fc, duration, da, sa, bssid, seq_ctrl, timestamp,
                      interval, capability, ssid, fcs_stored)


def parse_ppdu(bits) -> tuple:
    """Parse a full descrambled PPDU into (PlcpHeader, BeaconMpdu).

    The first 8 SYNC bits are ignored (a self-synchronizing descrambler and
    the DBPSK reference symbol make them unreliable); the remainder of the
    SYNC must be all ones and the SFD must match.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size < PLCP_BIT_COUNT:
        raise TruncatedFrame("PPDU shorter than preamble plus header")
    if not np.all(bits[8:SYNC_BIT_COUNT] == 1):
        raise SfdMismatch("descrambled SYNC is not all ones")
    sfd = bits_to_int(bits[SYNC_BIT_COUNT:PREAMBLE_BIT_COUNT])
    if sfd != SFD_LONG:
        raise SfdMismatch(f"bad SFD 0x{sfd:04X}")
    header = PlcpHeader.from_bits(bits[PREAMBLE_BIT_COUNT:PLCP_BIT_COUNT])
    if header.signal != SIGNAL_1MBPS:
        raise HeaderCrcError(f"unsupported SIGNAL code 0x{header.signal:02X}")
    mpdu_bits = bits[PLCP_BIT_COUNT:PLCP_BIT_COUNT + header.length_us]
    if mpdu_bits.size < header.length_us:
        raise TruncatedFrame("MPDU shorter than PLCP LENGTH")
    return header, parse_beacon(mpdu_bits)
