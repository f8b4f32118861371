import numpy as np
import pytest

from wlanpos import frames, modem

TEST_MAC = frames.mac_from_str("A4-2B-8C-04-E8-9D")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def beacon_stream_22m(n_beacons: int, interval_tu: int = 2, ssid: str = "TEST-B",
                      lead_samples: int = 1000) -> np.ndarray:
    """Clean beacon train at 22 MHz, one beacon every interval_tu TUs."""
    interval_us = frames.TimeUnit(interval_tu).microseconds
    spacing = int(interval_us * modem.PROC_RATE / 1e6)
    out = np.zeros(lead_samples + n_beacons * spacing, dtype=np.complex64)
    for k in range(n_beacons):
        bits = frames.build_beacon(ssid, TEST_MAC, seq=k,
                                   timestamp=k * interval_us,
                                   interval_tu=interval_tu)
        wave = modem.tx_waveform(bits, modem.PROC_RATE)
        start = lead_samples + k * spacing
        out[start:start + wave.size] = wave
    return out
