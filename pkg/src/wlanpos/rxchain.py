"""Burst receiver for 802.11b DSSS beacons at the 22 MHz processing rate.

decode_packet runs, per detected burst: coarse CFO estimation (Luise and
Reggiannini over the modulation-stripped SYNC) -> carrier wipe-off ->
residual phase correction -> Wiener-Hopf / least-squares channel estimation
on the SYNC -> equalization (chip level by default, symbol level optional,
with the Barker despreader placed accordingly) -> DBPSK demodulation ->
descrambling -> PLCP header CRC -> LENGTH-bounded MPDU -> FCS -> beacon
type/subtype filter -> MeasurementRecord.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import fft, ifft, next_fast_len
from scipy.signal import lfilter

from . import frames, modem
from .bitops import bits_to_int

CHIP_TS = 1.0 / modem.CHIP_RATE
SPS = modem.SAMPLES_PER_CHIP

REJECT_TRUNCATED = "truncated"
REJECT_SFD = "sfd_mismatch"
REJECT_HEADER_CRC = "header_crc_fail"
REJECT_FCS = "fcs_fail"
REJECT_NOT_A_BEACON = "not_a_beacon"
REJECT_ESTIMATION = "estimation_failed"
REJECT_MALFORMED = "malformed"


class EstimationFailed(Exception):
    """Channel estimation produced non-finite taps even with loading."""


@dataclass
class RxConfig:
    threshold: float = 0.85
    eq_level: str = "chip"              # chip | symbol
    n_taps: int = 5
    lut_enabled: bool = False
    matched_filter_enabled: bool = True
    cal_offset_db: float = 0.0
    wlan_channel: int = 1
    cfo_lags: int = 16
    max_mpdu_us: int = 4096
    taps_source: str = "channel"        # channel fit h | equalizer weights w


@dataclass
class DetectionResult:
    sample_index: int
    peak_ratio: float
    coarse_metrics: dict = field(default_factory=dict)


@dataclass
class CfoEstimate:
    freq_hz: float
    reliable: bool = True


@dataclass
class ChannelEstimate:
    taps: np.ndarray
    equalizer_taps: np.ndarray
    level: str


@dataclass
class MeasurementRecord:
    time_s: float
    ssid: str
    mac: bytes
    channel: int
    rssi_dbm: float
    taps: np.ndarray


@dataclass
class DecodeResult:
    record: MeasurementRecord | None
    reason: str | None
    diagnostics: dict = field(default_factory=dict)


def normalize_threshold(threshold: float) -> float:
    """Accept the front panel's 700-1000 scale as well as 0.7-1.0."""
    if threshold > 1.0:
        threshold = threshold / 1000.0
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold {threshold} out of range")
    return threshold


_REF_FFT_CACHE = {}


def _ref_fft(n_fft: int) -> np.ndarray:
    if n_fft not in _REF_FFT_CACHE:
        if len(_REF_FFT_CACHE) > 32:
            _REF_FFT_CACHE.clear()
        _REF_FFT_CACHE[n_fft] = np.conj(fft(modem.sync_reference_22m(), n_fft))
    return _REF_FFT_CACHE[n_fft]


def detect_sync(window, threshold: float, earliest: bool = False,
                n_rake: int = 5):
    """Energy-normalized FFT correlation against the known modulated SYNC.

    The threshold decision uses a rake-combined statistic: correlation
    energy summed over n_rake chip-spaced bins, so a burst through a
    multipath channel is judged by its total tap energy instead of only the
    strongest path.  The reported sample_index is the strongest single
    correlation bin inside the rake span.  Returns a DetectionResult
    (index local to the window, peak_ratio in [0, 1]) or None.  With
    earliest=True the first above-threshold offset is taken, which is what
    the streaming scanner wants when several bursts share a window.
    """
    threshold = normalize_threshold(threshold)
    ref = modem.sync_reference_22m()
    window = np.asarray(window, dtype=np.complex64)
    n_off = window.size - ref.size + 1
    if n_off < 1:
        raise ValueError("window shorter than one SYNC duration")
    n_fft = next_fast_len(window.size)
    corr = ifft(fft(window, n_fft) * _ref_fft(n_fft))[:n_off]
    c2 = np.abs(corr) ** 2
    power = np.abs(window) ** 2
    cum = np.concatenate([[0.0], np.cumsum(power, dtype=np.float64)])
    energy = cum[ref.size:] - cum[:n_off]
    ref_energy = float(np.sum(np.abs(ref) ** 2))

    # chip-spaced rake: sum of c2[k], c2[k+2], ..., n_rake bins
    span = SPS * max(n_rake, 1)
    rake = np.zeros(n_off)
    for j in range(0, span, SPS):
        take = c2[j:j + n_off]
        rake[: take.size] += take
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.sqrt(rake / (energy * ref_energy))
    ratio = np.nan_to_num(ratio, nan=0.0, posinf=0.0)
    np.minimum(ratio, 1.0, out=ratio)

    if earliest:
        above = np.flatnonzero(ratio >= threshold)
        if above.size == 0:
            return None
        first = int(above[0])
    else:
        first = int(np.argmax(ratio))
        if ratio[first] < threshold:
            return None
    # align to the strongest correlation bin within the rake span
    stop = min(first + span + SPS * modem.CHIPS_PER_SYMBOL, n_off)
    peak = first + int(np.argmax(c2[first:stop]))
    best_ratio = float(np.max(ratio[first:stop]))
    single = float(np.sqrt(c2[peak] / (energy[peak] * ref_energy))) \
        if energy[peak] > 0 else 0.0
    return DetectionResult(
        sample_index=peak,
        peak_ratio=best_ratio,
        coarse_metrics={"corr_peak": complex(corr[peak]),
                        "window_energy": float(energy[peak]),
                        "single_bin_ratio": min(single, 1.0)},
    )


def coarse_cfo_estimate(sync_chips, lags: int = 16) -> CfoEstimate:
    """Luise-Reggiannini burst estimator over the chip-rate SYNC.

    f = arg(sum_{m=1..M} R(m)) / (pi (M+1) Ts) where R(m) is the lag-m
    autocorrelation of the modulation-stripped SYNC.  Range |f| < 1/(2(M+1)Ts),
    about 323 kHz for M=16 at 11 Mchip/s.
    """
    ref = modem.sync_reference_chips()
    sync_chips = np.asarray(sync_chips, dtype=np.complex128)[: ref.size]
    z = sync_chips * np.conj(ref[: sync_chips.size])
    if z.size < lags + 2 or not np.any(np.abs(z) > 0):
        return CfoEstimate(0.0, reliable=False)
    acc = 0.0 + 0.0j
    for m in range(1, lags + 1):
        acc += np.mean(z[m:] * np.conj(z[:-m]))
    if abs(acc) < 1e-30 or not np.isfinite(acc):
        return CfoEstimate(0.0, reliable=False)
    freq = float(np.angle(acc) / (np.pi * (lags + 1) * CHIP_TS))
    return CfoEstimate(freq, reliable=True)


# ---------------------------------------------------------------------------
# Carrier wipe-off
# ---------------------------------------------------------------------------

_LUT_QUARTER = None
LUT_TABLE_SIZE = 1024   # effective points per cycle (256-entry quarter wave)


def _quarter_table() -> np.ndarray:
    global _LUT_QUARTER
    if _LUT_QUARTER is None:
        idx = np.arange(256, dtype=np.float64)
        _LUT_QUARTER = np.cos(2 * np.pi * (idx + 0.5) / LUT_TABLE_SIZE).astype(np.float32)
        _LUT_QUARTER.setflags(write=False)
    return _LUT_QUARTER


def _lut_cos(idx10: np.ndarray) -> np.ndarray:
    table = _quarter_table()
    quadrant = idx10 >> 8
    pos = (idx10 & 255).astype(np.int64)
    out = np.empty(idx10.shape, dtype=np.float32)
    q0, q1 = quadrant == 0, quadrant == 1
    q2, q3 = quadrant == 2, quadrant == 3
    out[q0] = table[pos[q0]]
    out[q1] = -table[255 - pos[q1]]
    out[q2] = -table[pos[q2]]
    out[q3] = table[255 - pos[q3]]
    return out


def carrier_wipeoff(stream, f_hz: float, fs: float, mode: str = "exact") -> np.ndarray:
    """Multiply by the conjugate carrier exp(-j 2 pi f t).

    quantized_lut mode uses a 256-entry quarter-wave cosine table addressed
    by the top bits of a 32-bit phase accumulator; phase error is bounded by
    2*pi / 1024.
    """
    stream = np.asarray(stream, dtype=np.complex64)
    if f_hz == 0.0 or stream.size == 0:
        return stream.copy()
    if mode == "exact":
        n = np.arange(stream.size, dtype=np.float64)
        rot = np.exp(-2j * np.pi * f_hz / fs * n).astype(np.complex64)
        return stream * rot
    if mode != "quantized_lut":
        raise ValueError(f"unknown wipe-off mode {mode!r}")
    inc = int(round(f_hz / fs * 2 ** 32)) % (2 ** 32)
    acc = (np.arange(stream.size, dtype=np.uint64) * np.uint64(inc)) & np.uint64(0xFFFFFFFF)
    idx10 = (acc >> np.uint64(22)).astype(np.int64)
    cos_v = _lut_cos(idx10)
    sin_v = _lut_cos((idx10 - 256) & 1023)
    return stream * (cos_v - 1j * sin_v).astype(np.complex64)


# ---------------------------------------------------------------------------
# Channel estimation / equalization
# ---------------------------------------------------------------------------

def _toeplitz_lags(x: np.ndarray, n_taps: int) -> np.ndarray:
    """Rows [x[k], x[k-1], ..., x[k-n+1]] for k = n_taps-1 .. len(x)-1."""
    win = np.lib.stride_tricks.sliding_window_view(x, n_taps)
    return win[:, ::-1]


def _regularized_solve(design: np.ndarray, target: np.ndarray,
                       load_factor: float) -> np.ndarray:
    gram = design.conj().T @ design
    n = gram.shape[0]
    lam = load_factor * np.trace(gram).real / n
    rhs = design.conj().T @ target
    sol = np.linalg.solve(gram + lam * np.eye(n), rhs)
    if not np.all(np.isfinite(sol)):
        raise EstimationFailed("non-finite solution from normal equations")
    return sol


def estimate_channel(received, known, n_taps: int = 5, level: str = "chip",
                     load_factor: float = 1e-3) -> ChannelEstimate:
    """Wiener-Hopf equalizer taps and least-squares channel fit on the SYNC.

    Equalizer w solves R w = p with R the autocorrelation of the received
    SYNC and p its cross-correlation with the known reference; the channel
    fit h minimizes ||received - known * h||^2.  Both normal systems get
    diagonal loading lam = load_factor * trace / n_taps.
    """
    if n_taps < 1:
        raise ValueError("n_taps must be >= 1")
    received = np.asarray(received, dtype=np.complex128)
    known = np.asarray(known, dtype=np.complex128)
    n = min(received.size, known.size)
    if n < n_taps + 8:
        raise EstimationFailed("SYNC span too short for the tap count")
    received, known = received[:n], known[:n]
    h = _regularized_solve(_toeplitz_lags(known, n_taps),
                           received[n_taps - 1:], load_factor)
    w = _regularized_solve(_toeplitz_lags(received, n_taps),
                           known[n_taps - 1:], load_factor)
    return ChannelEstimate(taps=h.astype(np.complex128),
                           equalizer_taps=w.astype(np.complex128), level=level)


def estimate_phase(symbols, reference) -> float:
    """Constant residual phase of `symbols` relative to the reference."""
    symbols = np.asarray(symbols)
    reference = np.asarray(reference)
    n = min(symbols.size, reference.size)
    inner = np.vdot(reference[:n], symbols[:n])  # sum(conj(ref) * sym)
    return float(np.angle(inner)) if abs(inner) > 1e-30 else 0.0


def phase_correct(symbols, reference) -> np.ndarray:
    """Remove the constant residual phase estimated against the reference."""
    symbols = np.asarray(symbols)
    phi = estimate_phase(symbols, reference)
    return symbols * np.complex64(np.exp(-1j * phi))


def compute_rssi(stream, packet_span, cal_offset_db: float = 0.0) -> float:
    """Mean-power RSSI in dBm over [start, stop), clamped to [-100, 0]."""
    start, stop = packet_span
    seg = np.asarray(stream)[start:stop]
    if seg.size == 0:
        raise ValueError("empty packet span")
    power = float(np.mean((seg.real.astype(np.float64) ** 2
                           + seg.imag.astype(np.float64) ** 2)))
    if power <= 0.0:
        return -100.0
    return float(np.clip(10 * np.log10(power) + cal_offset_db, -100.0, 0.0))


# ---------------------------------------------------------------------------
# Packet decode
# ---------------------------------------------------------------------------

_MF_CACHE = {}


def _matched_filter() -> tuple:
    if "taps" not in _MF_CACHE:
        taps = modem.matched_filter_taps()
        _MF_CACHE["taps"] = taps
        _MF_CACHE["delay"] = (taps.size - 1) // 2
    return _MF_CACHE["taps"], _MF_CACHE["delay"]


N_PLCP_SYMBOLS = 1 + frames.PLCP_BIT_COUNT      # reference + preamble + header


def decode_packet(stream, detection: DetectionResult, config: RxConfig,
                  time_s: float | None = None,
                  fs: float = modem.PROC_RATE) -> DecodeResult:
    """Decode one detected burst from a 22 MHz stream segment.

    detection.sample_index addresses the SYNC start within `stream`.  The
    PLCP is decoded first and its LENGTH bounds the second pass over the
    MPDU, so only the actual packet span is processed; a short segment
    yields a truncated reject rather than an error.
    """
    stream = np.asarray(stream, dtype=np.complex64)
    idx = detection.sample_index
    diag = {"peak_ratio": detection.peak_ratio}
    wipe_mode = "quantized_lut" if config.lut_enabled else "exact"
    ref_chips = modem.sync_reference_chips()
    ref_syms = modem.sync_reference_symbols()

    def take_chips(n_chips: int) -> np.ndarray:
        n_chips = min(n_chips, (stream.size - idx) // SPS)
        end = idx + n_chips * SPS
        if config.matched_filter_enabled:
            taps, delay = _matched_filter()
            a = max(idx - taps.size, 0)
            filt = lfilter(taps, [1.0], stream[a: end + delay])
            first = idx - a + delay
            return filt[first: first + n_chips * SPS: SPS]
        return stream[idx: end: SPS]

    if stream.size < idx + N_PLCP_SYMBOLS * modem.CHIPS_PER_SYMBOL * SPS:
        return DecodeResult(None, REJECT_TRUNCATED, diag)

    # pass 1: PLCP. Coarse CFO from the raw SYNC chips, wipe off at chip
    # rate, constant-phase correction, channel estimate on the SYNC.
    plcp_chips_raw = take_chips(N_PLCP_SYMBOLS * modem.CHIPS_PER_SYMBOL)
    cfo = coarse_cfo_estimate(plcp_chips_raw[: ref_chips.size],
                              lags=config.cfo_lags)
    diag["cfo_hz"] = cfo.freq_hz
    diag["cfo_reliable"] = cfo.reliable

    def condition(chips_raw, phi=None):
        chips = carrier_wipeoff(chips_raw, cfo.freq_hz, modem.CHIP_RATE,
                                wipe_mode)
        if phi is None:
            phi = estimate_phase(chips[: ref_chips.size], ref_chips)
        return chips * np.complex64(np.exp(-1j * phi)), phi

    plcp_chips, phi = condition(plcp_chips_raw)
    diag["phase_rad"] = phi

    try:
        if config.eq_level == "chip":
            est = estimate_channel(plcp_chips[: ref_chips.size], ref_chips,
                                   n_taps=config.n_taps, level="chip")
        elif config.eq_level == "symbol":
            plcp_syms = modem.barker_despread(plcp_chips)
            est = estimate_channel(plcp_syms[: ref_syms.size], ref_syms,
                                   n_taps=config.n_taps, level="symbol")
        else:
            raise ValueError(f"unknown eq_level {config.eq_level!r}")
    except EstimationFailed:
        return DecodeResult(None, REJECT_ESTIMATION, diag)

    def demodulate(chips_conditioned) -> np.ndarray:
        w = est.equalizer_taps
        if config.eq_level == "chip":
            eq_chips = lfilter(w, [1.0], chips_conditioned)
            symbols = modem.barker_despread(eq_chips)
        else:
            symbols = lfilter(w, [1.0], modem.barker_despread(chips_conditioned))
        if symbols.size < 2:
            raise frames.TruncatedFrame("not enough symbols")
        return frames.descramble(modem.dbpsk_demod(symbols))

    try:
        plcp_bits = demodulate(plcp_chips)
    except frames.TruncatedFrame:
        return DecodeResult(None, REJECT_TRUNCATED, diag)
    if plcp_bits.size < frames.PLCP_BIT_COUNT:
        return DecodeResult(None, REJECT_TRUNCATED, diag)
    sfd_val = bits_to_int(
        plcp_bits[frames.SYNC_BIT_COUNT:frames.PREAMBLE_BIT_COUNT])
    if sfd_val != frames.SFD_LONG:
        return DecodeResult(None, REJECT_SFD, diag)
    try:
        header = frames.PlcpHeader.from_bits(
            plcp_bits[frames.PREAMBLE_BIT_COUNT:frames.PLCP_BIT_COUNT])
    except frames.HeaderCrcError:
        return DecodeResult(None, REJECT_HEADER_CRC, diag)
    if header.signal != frames.SIGNAL_1MBPS:
        return DecodeResult(None, REJECT_HEADER_CRC, diag)
    if header.length_us > config.max_mpdu_us:
        return DecodeResult(None, REJECT_HEADER_CRC, diag)
    diag["length_us"] = header.length_us

    # pass 2: the full LENGTH-bounded packet through the same conditioning
    n_total_sym = N_PLCP_SYMBOLS + header.length_us
    diag["packet_samples"] = n_total_sym * modem.CHIPS_PER_SYMBOL * SPS
    full_chips, _ = condition(take_chips(n_total_sym * modem.CHIPS_PER_SYMBOL),
                              phi=phi)
    try:
        bits = demodulate(full_chips)
    except frames.TruncatedFrame:
        return DecodeResult(None, REJECT_TRUNCATED, diag)
    mpdu_bits = bits[frames.PLCP_BIT_COUNT:
                     frames.PLCP_BIT_COUNT + header.length_us]
    if mpdu_bits.size < header.length_us:
        return DecodeResult(None, REJECT_TRUNCATED, diag)
    try:
        mpdu = frames.parse_beacon(mpdu_bits)
    except frames.FcsMismatch:
        return DecodeResult(None, REJECT_FCS, diag)
    except frames.NotABeacon:
        return DecodeResult(None, REJECT_NOT_A_BEACON, diag)
    except frames.TruncatedFrame:
        return DecodeResult(None, REJECT_TRUNCATED, diag)
    except frames.MalformedFrame:
        return DecodeResult(None, REJECT_MALFORMED, diag)

    span = (idx, min(idx + n_total_sym * modem.CHIPS_PER_SYMBOL * SPS,
                     stream.size))
    rssi = compute_rssi(stream, span, config.cal_offset_db)
    taps = est.taps if config.taps_source == "channel" else est.equalizer_taps
    record = MeasurementRecord(
        time_s=time_s if time_s is not None else idx / fs,
        ssid=mpdu.ssid,
        mac=mpdu.bssid,
        channel=config.wlan_channel,
        rssi_dbm=rssi,
        taps=np.asarray(taps, dtype=np.complex128),
    )
    return DecodeResult(record, None, diag)
