import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wlanpos import frames
from wlanpos.bitops import bits_to_bytes, bytes_to_bits, int_to_bits

from conftest import TEST_MAC


# ---------------------------------------------------------------------------
# Independent oracles
# ---------------------------------------------------------------------------

def oracle_crc32(data: bytes) -> int:
    """Bitwise reflected CRC-32 (0x04C11DB7), preset and final-xor ones."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


def oracle_crc16(data: bytes) -> int:
    """CCITT CRC-16 by explicit polynomial long division over the serialized
    bit stream (LSB-first octets), preset ones, ones-complement result."""
    reg = 0xFFFF
    for byte in data:
        for k in range(8):
            bit = (byte >> k) & 1
            msb = (reg >> 15) & 1
            reg = ((reg << 1) & 0xFFFF)
            if msb ^ bit:
                reg ^= 0x1021
    # reflect the register to match transmit order of the reflected algorithm
    out = 0
    for i in range(16):
        out |= ((reg >> i) & 1) << (15 - i)
    return out ^ 0xFFFF


def oracle_scramble(bits, seed: int):
    """Direct LFSR simulation, taps Z4 and Z7, output feeds the register."""
    z = [(seed >> k) & 1 for k in range(7)]  # z[0]=Z1 .. z[6]=Z7
    out = []
    for b in bits:
        o = int(b) ^ z[3] ^ z[6]
        z = [o] + z[:6]
        out.append(o)
    return np.array(out, dtype=np.uint8)


# ---------------------------------------------------------------------------
# CRCs
# ---------------------------------------------------------------------------

def test_crc32_check_value():
    assert frames.crc32_fcs(b"123456789") == 0xCBF43926
    assert oracle_crc32(b"123456789") == 0xCBF43926


def test_crc32_matches_oracle(rng):
    for n in [0, 1, 7, 64, 300]:
        data = rng.integers(0, 256, n, dtype=np.uint8).tobytes()
        assert frames.crc32_fcs(data) == oracle_crc32(data)


def test_crc16_check_value_and_oracle(rng):
    assert frames.crc16_ccitt(b"123456789") == oracle_crc16(b"123456789") == 0x906E
    for n in [1, 4, 33, 200]:
        data = rng.integers(0, 256, n, dtype=np.uint8).tobytes()
        assert frames.crc16_ccitt(data) == oracle_crc16(data)


def test_crc16_empty_input_fixed_by_definition():
    # preset ones, zero bits processed, ones-complement result
    assert frames.crc16_ccitt(b"") == 0x0000


def test_header_crc_round_trip():
    hdr = frames.PlcpHeader.build(length_us=384)
    assert hdr.crc_ok()
    assert frames.PlcpHeader.from_bits(hdr.to_bits()) == hdr


# ---------------------------------------------------------------------------
# Scrambler
# ---------------------------------------------------------------------------

def test_scrambler_self_inverse_10000_bits(rng):
    bits = rng.integers(0, 2, 10000).astype(np.uint8)
    scrambled = frames.scramble(bits)
    assert not np.array_equal(scrambled, bits)
    assert np.array_equal(frames.descramble(scrambled), bits)


@given(st.lists(st.integers(0, 1), min_size=0, max_size=600),
       st.integers(1, 127))
@settings(max_examples=60, deadline=None)
def test_scramble_descramble_identity(bits, seed):
    bits = np.array(bits, dtype=np.uint8)
    assert np.array_equal(frames.descramble(frames.scramble(bits, seed), seed), bits)
    assert np.array_equal(frames.scramble(frames.descramble(bits, seed), seed), bits)


def test_scrambler_matches_lfsr_oracle(rng):
    bits = rng.integers(0, 2, 997).astype(np.uint8)  # odd length: tail path
    for seed in (frames.SCRAMBLER_SEED_LONG, 0x55, 0x01):
        assert np.array_equal(frames.scramble(bits, seed),
                              oracle_scramble(bits, seed))


def test_sync_pattern_from_long_seed():
    sync = frames.long_preamble_sync_bits()
    expected = oracle_scramble(np.ones(128, dtype=np.uint8),
                               frames.SCRAMBLER_SEED_LONG)
    assert np.array_equal(sync, expected)
    assert sync.size == 128


def test_zero_seed_rejected():
    with pytest.raises(ValueError):
        frames.scramble(np.ones(8, dtype=np.uint8), 0)
    with pytest.raises(ValueError):
        frames.descramble(np.ones(8, dtype=np.uint8), 0)


def test_zero_length_input():
    assert frames.scramble(np.zeros(0, dtype=np.uint8)).size == 0
    assert frames.descramble(np.zeros(0, dtype=np.uint8)).size == 0


def test_descramble_error_burst_confined(rng):
    bits = rng.integers(0, 2, 2000).astype(np.uint8)
    scrambled = frames.scramble(bits)
    for flip in (100, 777, 1500):
        corrupted = scrambled.copy()
        corrupted[flip] ^= 1
        errors = np.flatnonzero(frames.descramble(corrupted) != bits)
        assert set(errors.tolist()) == {flip, flip + 4, flip + 7}
        assert errors.max() - errors.min() < 8


def test_self_synchronization_wrong_seed(rng):
    bits = rng.integers(0, 2, 500).astype(np.uint8)
    scrambled = frames.scramble(bits, frames.SCRAMBLER_SEED_LONG)
    recovered = frames.descramble(scrambled, 0x2A)
    assert np.array_equal(recovered[7:], bits[7:])


# ---------------------------------------------------------------------------
# Beacon build / parse
# ---------------------------------------------------------------------------

def test_build_parse_paper_example():
    ppdu = frames.build_beacon("TEST-B", TEST_MAC, seq=12, timestamp=987654,
                               interval_tu=100)
    header, mpdu = frames.parse_ppdu(ppdu)
    assert mpdu.ssid == "TEST-B"
    assert frames.mac_to_str(mpdu.bssid) == "A4-2B-8C-04-E8-9D"
    assert mpdu.seq == 12
    assert mpdu.timestamp == 987654
    assert mpdu.beacon_interval == 100
    assert frames.TimeUnit(mpdu.beacon_interval).microseconds == 102400
    assert mpdu.da == frames.BROADCAST_MAC
    assert mpdu.sa == TEST_MAC


def test_length_field_equals_mpdu_bits():
    for ssid in ("", "A", "TEST-B", "x" * 32):
        ppdu = frames.build_beacon(ssid, TEST_MAC)
        header, mpdu = frames.parse_ppdu(ppdu)
        mpdu_bits = ppdu.size - frames.PLCP_BIT_COUNT
        assert header.length_us == mpdu_bits
        assert mpdu.ssid == ssid


def test_oversize_ssid_rejected():
    with pytest.raises(ValueError):
        frames.build_beacon("x" * 33, TEST_MAC)


def test_empty_ssid_valid():
    ppdu = frames.build_beacon("", TEST_MAC)
    _, mpdu = frames.parse_ppdu(ppdu)
    assert mpdu.ssid == ""


ssid_strategy = st.text(
    alphabet=st.characters(min_codepoint=32, max_codepoint=126), max_size=32)
mac_strategy = st.binary(min_size=6, max_size=6)


@given(ssid=ssid_strategy, mac=mac_strategy,
       seq=st.integers(0, 4095), timestamp=st.integers(0, 2 ** 64 - 1),
       interval=st.integers(1, 65535))
@settings(max_examples=40, deadline=None)
def test_round_trip_property(ssid, mac, seq, timestamp, interval):
    ppdu = frames.build_beacon(ssid, mac, seq=seq, timestamp=timestamp,
                               interval_tu=interval)
    _, mpdu = frames.parse_ppdu(ppdu)
    assert (mpdu.ssid, mpdu.bssid, mpdu.seq, mpdu.timestamp,
            mpdu.beacon_interval) == (ssid, mac, seq, timestamp, interval)


def test_single_bit_corruption_caught(rng):
    ppdu = frames.build_beacon("TEST-B", TEST_MAC, seq=3)
    for _ in range(60):
        pos = int(rng.integers(0, ppdu.size))
        bad = ppdu.copy()
        bad[pos] ^= 1
        with pytest.raises(frames.FrameError):
            frames.parse_ppdu(bad)


def test_data_frame_is_not_a_beacon():
    mpdu = bytearray(frames.build_beacon_mpdu("TEST-B", TEST_MAC, 0, 0, 100))
    body = mpdu[:-4]
    body[0] = (body[0] & ~0x0C) | (2 << 2)  # type = 2 (data)
    fcs = frames.crc32_fcs(bytes(body))
    with pytest.raises(frames.NotABeacon):
        frames.parse_beacon(bytes_to_bits(bytes(body) + fcs.to_bytes(4, "little")))


def test_truncated_frame():
    # one byte short of the PLCP LENGTH
    ppdu = frames.build_beacon("TEST-B", TEST_MAC)
    with pytest.raises(frames.TruncatedFrame):
        frames.parse_ppdu(ppdu[:-8])
    # structurally impossible sizes at the MPDU level
    mpdu = frames.build_beacon_mpdu("TEST-B", TEST_MAC, 0, 0, 100)
    with pytest.raises(frames.TruncatedFrame):
        frames.parse_beacon(bytes_to_bits(mpdu[:40]))
    with pytest.raises(frames.TruncatedFrame):
        frames.parse_beacon(bytes_to_bits(mpdu)[:-4])  # not byte aligned


def test_unknown_information_elements_skipped():
    extra = bytes([3, 1, 7]) + bytes([221, 4, 1, 2, 3, 4])  # DS param + vendor
    mpdu = frames.build_beacon_mpdu("TEST-B", TEST_MAC, 5, 42, 100,
                                    extra_ies=extra)
    parsed = frames.parse_beacon(bytes_to_bits(mpdu))
    assert parsed.ssid == "TEST-B"


def test_overrunning_element_truncated():
    extra = bytes([221, 250])  # claims 250 bytes that are not there
    mpdu = frames.build_beacon_mpdu("TEST-B", TEST_MAC, 0, 0, 100,
                                    extra_ies=extra)
    with pytest.raises(frames.TruncatedFrame):
        frames.parse_beacon(bytes_to_bits(mpdu))


def test_missing_ssid_element_malformed():
    fc = (8 << 4) | 0
    body = bytearray()
    body += fc.to_bytes(2, "little") + (0).to_bytes(2, "little")
    body += frames.BROADCAST_MAC + TEST_MAC + TEST_MAC
    body += (0).to_bytes(2, "little")
    body += (0).to_bytes(8, "little") + (100).to_bytes(2, "little")
    body += (1).to_bytes(2, "little")
    body += bytes([3, 1, 7])  # only a DS element, no SSID
    fcs = frames.crc32_fcs(bytes(body))
    with pytest.raises(frames.MalformedFrame):
        frames.parse_beacon(bytes_to_bits(bytes(body) + fcs.to_bytes(4, "little")))


def test_bad_sfd_rejected():
    ppdu = frames.build_beacon("TEST-B", TEST_MAC)
    bad = ppdu.copy()
    bad[frames.SYNC_BIT_COUNT] ^= 1  # first SFD bit
    with pytest.raises(frames.SfdMismatch):
        frames.parse_ppdu(bad)


@given(st.integers(0, 10 ** 7))
@settings(max_examples=50, deadline=None)
def test_time_unit_exact(tu):
    assert frames.TimeUnit(tu).microseconds == 1024 * tu


def test_bitops_round_trip(rng):
    data = rng.integers(0, 256, 64, dtype=np.uint8).tobytes()
    assert bits_to_bytes(bytes_to_bits(data)) == data
    assert np.array_equal(int_to_bits(0xF3A0, 16),
                          bytes_to_bits(bytes([0xA0, 0xF3])))
