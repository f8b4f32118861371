import numpy as np
import pytest

from wlanpos import frames, modem

from conftest import TEST_MAC


def test_barker_word_matches_standard():
    expected = np.array([1, -1, 1, 1, -1, 1, 1, 1, -1, -1, -1])
    assert np.array_equal(modem.BARKER, expected)


def test_barker_autocorrelation_peak_and_sidelobes():
    acorr = np.correlate(modem.BARKER, modem.BARKER, "full")
    center = acorr.size // 2
    assert acorr[center] == 11
    off_peak = np.delete(acorr, center)
    assert np.max(np.abs(off_peak)) <= 1


def test_single_reference_symbol_is_barker_word():
    # zero data bits -> just the +1 reference symbol
    seq = modem.barker_spread(np.zeros(0, dtype=np.uint8))
    assert np.array_equal(seq.chips, modem.BARKER)


def test_all_zero_bits_constant_phase():
    n = 50
    symbols = modem.differential_encode(np.zeros(n, dtype=np.uint8))
    assert symbols.size == n + 1
    assert np.all(symbols == symbols[0])


def test_spread_despread_recovers_bits_with_gain_11(rng):
    bits = rng.integers(0, 2, 200).astype(np.uint8)
    chips = modem.barker_spread(bits).chips
    # unnormalized correlation gain is 11 per symbol
    raw_corr = chips[:11] @ modem.BARKER
    assert raw_corr == pytest.approx(11.0)
    symbols = modem.barker_despread(chips)
    assert np.allclose(np.abs(symbols), 1.0)
    assert np.array_equal(modem.dbpsk_demod(symbols), bits)


def test_despread_misaligned_offset_degrades(rng):
    bits = rng.integers(0, 2, 300).astype(np.uint8)
    chips = modem.barker_spread(bits).chips
    misaligned = modem.barker_despread(chips, chip_offset=5)
    assert np.max(np.abs(misaligned)) < 0.5


def test_despread_noise_only(rng):
    sigma = 0.7
    noise = sigma / np.sqrt(2) * (rng.standard_normal(11 * 4000)
                                  + 1j * rng.standard_normal(11 * 4000))
    symbols = modem.barker_despread(noise)
    # despreading scales noise power by 1/11
    measured = np.mean(np.abs(symbols) ** 2)
    assert measured == pytest.approx(sigma ** 2 / 11, rel=0.1)


def test_dbpsk_constant_symbols_all_zeros():
    assert np.array_equal(modem.dbpsk_demod(np.ones(20)), np.zeros(19))


def test_dbpsk_alternating_symbols_all_ones():
    symbols = np.array([1, -1] * 10, dtype=float)
    assert np.array_equal(modem.dbpsk_demod(symbols), np.ones(19))


def test_dbpsk_needs_two_symbols():
    with pytest.raises(ValueError):
        modem.dbpsk_demod(np.ones(1))


def test_mod_demod_identity(rng):
    bits = rng.integers(0, 2, 1000).astype(np.uint8)
    symbols = modem.differential_encode(bits)
    assert np.array_equal(modem.dbpsk_demod(symbols), bits)


def test_tx_waveform_duration():
    ppdu = frames.build_beacon("TEST-B", TEST_MAC)
    length_us = ppdu.size - frames.PLCP_BIT_COUNT
    wave = modem.tx_waveform(ppdu, sample_rate=modem.PROC_RATE)
    # 144-bit preamble + 48-bit header + MPDU at 1 Mbps, plus the DBPSK
    # reference symbol, at 22 samples per microsecond
    assert wave.size == (192 + length_us + 1) * 22
    wave25 = modem.tx_waveform(ppdu, sample_rate=modem.CAPTURE_RATE)
    assert wave25.size == (wave.size * 25) // 22


def test_tx_waveform_rejects_other_rates():
    ppdu = frames.build_beacon("x", TEST_MAC)
    with pytest.raises(ValueError):
        modem.tx_waveform(ppdu, sample_rate=20e6)


def test_tx_spectrum_occupies_22mhz():
    ppdu = frames.build_beacon("TEST-B", TEST_MAC)
    wave = modem.tx_waveform(ppdu, sample_rate=modem.PROC_RATE)
    n = 1 << 13
    psd = np.abs(np.fft.fft(wave[:n] * np.hanning(n))) ** 2
    freqs = np.fft.fftfreq(n, 1 / modem.PROC_RATE)
    in_band = psd[np.abs(freqs) <= 11e6].sum()
    assert in_band / psd.sum() > 0.95
    # rectangular 11 Mchip/s pulses put the first spectral null at 11 MHz
    null_region = psd[(freqs > 10.2e6) & (freqs < 11e6)].mean()
    mid_band = psd[(freqs > 4e6) & (freqs < 6e6)].mean()
    assert null_region < mid_band / 10


def test_matched_filter_taps_properties():
    taps = modem.matched_filter_taps()
    assert taps.size % 2 == 1
    assert np.allclose(taps, taps[::-1], atol=1e-7)       # linear phase
    assert taps.sum() == pytest.approx(1.0, abs=1e-6)     # unit DC gain
    with pytest.raises(ValueError):
        modem.matched_filter_taps(n_taps=8)


def test_sync_references_consistent():
    ref22 = modem.sync_reference_22m()
    chips = modem.sync_reference_chips()
    assert ref22.size == modem.SYNC_SAMPLE_COUNT
    assert chips.size == modem.SYNC_CHIP_COUNT
    # the 22 MHz reference holds each chip for 2 samples
    assert np.allclose(ref22[::2], chips)
    assert np.allclose(ref22[1::2], chips)


def test_modem_loopback_noiseless():
    ppdu = frames.build_beacon("LOOP", TEST_MAC, seq=9)
    wave = modem.tx_waveform(ppdu, sample_rate=modem.PROC_RATE)
    chips = wave[::2]
    symbols = modem.barker_despread(chips)
    bits = frames.descramble(modem.dbpsk_demod(symbols))
    _, mpdu = frames.parse_ppdu(bits)
    assert mpdu.ssid == "LOOP"
    assert mpdu.seq == 9
