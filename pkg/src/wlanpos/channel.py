"""Ground-truth channel simulator and survey synthesizer.

Impairments: chip-spaced multipath FIR, integer delay, carrier frequency
offset, gain, and complex AWGN at a configured SNR relative to the realized
signal power.  `gen_profiles` lays location-dependent profiles over a survey
grid: log-distance path loss plus spatially correlated small-scale fading
(exponentially decaying tap powers; the first tap may carry a Rician line-of-
sight component so packet detection stays reliable at every point).
"""

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import frames, iqfile, modem
from .resample import Resampler

SPEED_OF_LIGHT = 299792458.0
CARRIER_HZ = 2.412e9  # WLAN channel 1


@dataclass(frozen=True)
class ChannelProfile:
    """Per-location propagation description (taps are chip-spaced)."""

    taps: tuple
    cfo_hz: float = 0.0
    delay_samples: int = 0
    gain_db: float = 0.0
    snr_db: float = float("inf")

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.complex128)
        if taps.size < 1 or not np.any(np.abs(taps) > 0):
            raise ValueError("profile needs at least one nonzero tap")
        object.__setattr__(self, "taps", tuple(taps.tolist()))

    @property
    def tap_array(self) -> np.ndarray:
        return np.asarray(self.taps, dtype=np.complex64)


def apply_channel(stream, profile: ChannelProfile, seed: int,
                  fs: float = modem.PROC_RATE,
                  tap_spacing: int = modem.SAMPLES_PER_CHIP) -> np.ndarray:
    """y = (x * taps) delayed, rotated by the CFO, scaled, plus AWGN.

    Deterministic for a given seed.  Taps are chip-spaced, i.e. tap_spacing
    samples apart at the given rate (2 at 22 MHz).
    """
    x = np.asarray(stream, dtype=np.complex64)
    taps = profile.tap_array
    fir = np.zeros((taps.size - 1) * tap_spacing + 1, dtype=np.complex64)
    fir[::tap_spacing] = taps
    padded = np.concatenate([x, np.zeros(fir.size - 1, dtype=np.complex64)])
    y = lfilter(fir, [1.0], padded)
    if profile.delay_samples:
        y = np.concatenate([np.zeros(profile.delay_samples, np.complex64), y])
    if profile.cfo_hz:
        phase = (np.float32(2 * np.pi * profile.cfo_hz / fs)
                 * np.arange(y.size, dtype=np.float32))
        y = y * (np.cos(phase) + 1j * np.sin(phase)).astype(np.complex64)
    gain = np.float32(10 ** (profile.gain_db / 20))
    y = y * gain
    if np.isfinite(profile.snr_db):
        power = np.abs(y) ** 2
        active = power > 1e-12 * power.max()
        p_sig = float(power[active].mean()) if active.any() else 0.0
        sigma = np.sqrt(p_sig * 10 ** (-profile.snr_db / 10) / 2)
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(2 * y.size, dtype=np.float32).view(np.complex64)
        y = y + noise * np.float32(sigma)
    return y.astype(np.complex64, copy=False)


# ---------------------------------------------------------------------------
# Survey grids and location-dependent profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurveyModelParams:
    """Tunables for the statistical propagation model over the grid."""

    ap_xy: tuple = (2.7, 1.8)
    n_taps: int = 5
    corr_length_m: float = 2.0
    decay_db_per_tap: float = 9.0
    rician_k: float = 6.0          # 0 -> pure Rayleigh first tap
    pathloss_exp: float = 2.0
    ref_snr_db: float = 30.0       # SNR at 1 m from the AP
    min_dist_m: float = 0.5
    cfo_base_hz: float = 1200.0
    cfo_jitter_hz: float = 150.0
    base_delay_samples: int = 64
    delay_jitter_samples: int = 32


@dataclass
class SurveyScenario:
    grid: list                      # [(rp_id, x_m, y_m), ...]
    profile_per_rp: dict            # rp_id -> ChannelProfile
    beacons_per_rp: int = 600
    beacon_interval_tu: int = 100
    ssid: str = "TEST-B"
    bssid: bytes = b"\xa4\x2b\x8c\x04\xe8\x9d"
    wlan_channel: int = 1
    sample_rate_hz: float = iqfile.DEFAULT_SAMPLE_RATE
    start_offset_us: int = 500
    model: SurveyModelParams = field(default_factory=SurveyModelParams)


def square_grid(rows: int, cols: int, spacing_m: float,
                n_points: int | None = None) -> list:
    """Row-major grid of reference points; optionally truncated to n_points."""
    pts = [(r * cols + c, c * spacing_m, r * spacing_m)
           for r in range(rows) for c in range(cols)]
    return pts[:n_points] if n_points is not None else pts


def gen_profiles(grid, params: SurveyModelParams, seed: int) -> dict:
    """Location-dependent profiles: path-loss SNR/gain plus spatially
    correlated complex taps with exponential power decay."""
    rps = np.array([(x, y) for _, x, y in grid])
    n = len(grid)
    rng = np.random.default_rng(seed)

    dx = rps[:, 0][:, None] - rps[:, 0][None, :]
    dy = rps[:, 1][:, None] - rps[:, 1][None, :]
    dist = np.sqrt(dx ** 2 + dy ** 2)
    if params.corr_length_m > 0:
        cov = np.exp(-dist / params.corr_length_m) + 1e-9 * np.eye(n)
        chol = np.linalg.cholesky(cov)
    else:
        chol = np.eye(n)

    powers = 10 ** (-params.decay_db_per_tap * np.arange(params.n_taps) / 10)
    powers /= powers.sum()

    fields = np.empty((params.n_taps, n), dtype=np.complex128)
    for t in range(params.n_taps):
        re = chol @ rng.standard_normal(n)
        im = chol @ rng.standard_normal(n)
        fields[t] = (re + 1j * im) / np.sqrt(2)

    d_ap = np.maximum(np.hypot(rps[:, 0] - params.ap_xy[0],
                               rps[:, 1] - params.ap_xy[1]),
                      params.min_dist_m)
    pl_db = 10 * params.pathloss_exp * np.log10(d_ap / 1.0)
    los_phase = np.exp(-2j * np.pi * d_ap * CARRIER_HZ / SPEED_OF_LIGHT)
    cfos = params.cfo_base_hz + params.cfo_jitter_hz * rng.standard_normal(n)
    delays = params.base_delay_samples + rng.integers(
        0, params.delay_jitter_samples + 1, n)

    profiles = {}
    k = params.rician_k
    for i, (rp_id, _, _) in enumerate(grid):
        taps = np.sqrt(powers) * fields[:, i]
        if k > 0:
            taps[0] = np.sqrt(powers[0]) * (
                np.sqrt(k / (k + 1)) * los_phase[i]
                + np.sqrt(1 / (k + 1)) * fields[0, i])
        profiles[rp_id] = ChannelProfile(
            taps=tuple(taps.tolist()),
            cfo_hz=float(cfos[i]),
            delay_samples=int(delays[i]),
            gain_db=float(-pl_db[i]),
            snr_db=float(params.ref_snr_db - pl_db[i]),
        )
    return profiles


def make_survey_scenario(rows: int, cols: int, spacing_m: float,
                         params: SurveyModelParams, seed: int,
                         n_points: int | None = None, **kwargs) -> SurveyScenario:
    grid = square_grid(rows, cols, spacing_m, n_points)
    profiles = gen_profiles(grid, params, seed)
    return SurveyScenario(grid=grid, profile_per_rp=profiles,
                          model=params, **kwargs)


# ---------------------------------------------------------------------------
# Survey synthesis
# ---------------------------------------------------------------------------

def beacon_train(scenario: SurveyScenario, rp_id: int, seed: int) -> np.ndarray:
    """One reference point's capture stream at 22 MHz through its channel."""
    profile = scenario.profile_per_rp[rp_id]
    interval_us = frames.TimeUnit(scenario.beacon_interval_tu).microseconds
    fs = modem.PROC_RATE
    spacing = int(interval_us * fs / 1e6)
    offset = int(scenario.start_offset_us * fs / 1e6)
    n_total = offset + scenario.beacons_per_rp * spacing
    clean = np.zeros(n_total, dtype=np.complex64)
    for k in range(scenario.beacons_per_rp):
        bits = frames.build_beacon(scenario.ssid, scenario.bssid, seq=k,
                                   timestamp=k * interval_us,
                                   interval_tu=scenario.beacon_interval_tu)
        wave = modem.tx_waveform(bits, sample_rate=fs)
        start = offset + k * spacing
        clean[start:start + wave.size] = wave
    return apply_channel(clean, profile, seed=seed, fs=fs)


def capture_scale(scenario: SurveyScenario) -> float:
    """Global int16 scale: headroom for the strongest RP, shared by all RPs
    so recorded RSS stays comparable across locations."""
    worst = 0.0
    for profile in scenario.profile_per_rp.values():
        gain = 10 ** (profile.gain_db / 20)
        mags = np.abs(profile.tap_array)
        peak = gain * mags.sum()
        sigma = gain * np.sqrt((mags ** 2).sum()) * 10 ** (-min(profile.snr_db, 60) / 20)
        worst = max(worst, float(peak + 4 * sigma))
    return 24000.0 / worst if worst > 0 else iqfile.DEFAULT_SCALE


def capture_file_name(rp_id: int) -> str:
    return f"capture_rp{rp_id:03d}.iq"


def _synth_one_rp(args):
    scenario, rp_id, seed, out_dir, scale = args
    stream = beacon_train(scenario, rp_id, seed=seed)
    if scenario.sample_rate_hz == modem.CAPTURE_RATE:
        stream = Resampler(25, 22).apply(stream)
    elif scenario.sample_rate_hz != modem.PROC_RATE:
        raise ValueError("survey sample rate must be 22e6 or 25e6")
    path = Path(out_dir) / capture_file_name(rp_id)
    iqfile.write_capture(path, stream, scenario.sample_rate_hz, scale)
    return rp_id, str(path)


MANIFEST_NAME = "manifest.tsv"


def write_manifest(scenario: SurveyScenario, path) -> int:
    """One ground-truth row per transmitted beacon:
    rp_id, x_m, y_m, tap real/imag pairs, snr_db, cfo_hz."""
    n_taps = scenario.model.n_taps
    cols = ["rp_id", "x_m", "y_m"]
    for t in range(1, n_taps + 1):
        cols += [f"tap{t}_re", f"tap{t}_im"]
    cols += ["snr_db", "cfo_hz"]
    rows = 0
    with open(path, "w") as fh:
        fh.write("\t".join(cols) + "\n")
        for rp_id, x, y in scenario.grid:
            p = scenario.profile_per_rp[rp_id]
            taps = p.tap_array
            vals = [str(rp_id), f"{x:.4f}", f"{y:.4f}"]
            for t in range(n_taps):
                tap = taps[t] if t < taps.size else 0
                vals += [f"{tap.real:.6g}", f"{tap.imag:.6g}"]
            vals += [f"{p.snr_db:.4f}", f"{p.cfo_hz:.4f}"]
            line = "\t".join(vals) + "\n"
            for _ in range(scenario.beacons_per_rp):
                fh.write(line)
                rows += 1
    return rows


def synth_survey(scenario: SurveyScenario, seed: int, out_dir,
                 workers: int = 1) -> dict:
    """Write per-RP capture files plus the ground-truth manifest.

    Returns {"captures": {rp_id: path}, "manifest": path, "scale": float}.
    """
    if scenario.beacons_per_rp < 1:
        raise ValueError("beacons_per_rp must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scale = capture_scale(scenario)
    jobs = [(scenario, rp_id, _rp_seed(seed, rp_id), out_dir, scale)
            for rp_id, _, _ in scenario.grid]
    captures = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rp_id, path in pool.map(_synth_one_rp, jobs):
                captures[rp_id] = path
    else:
        for job in jobs:
            rp_id, path = _synth_one_rp(job)
            captures[rp_id] = path
    manifest = out_dir / MANIFEST_NAME
    write_manifest(scenario, manifest)
    meta = {
        "seed": seed,
        "scale": scale,
        "sample_rate_hz": scenario.sample_rate_hz,
        "ssid": scenario.ssid,
        "bssid": frames.mac_to_str(scenario.bssid),
        "wlan_channel": scenario.wlan_channel,
        "beacons_per_rp": scenario.beacons_per_rp,
        "beacon_interval_tu": scenario.beacon_interval_tu,
        "n_rps": len(scenario.grid),
    }
    (out_dir / "scenario.json").write_text(json.dumps(meta, indent=2) + "\n")
    return {"captures": captures, "manifest": str(manifest), "scale": scale}


def _rp_seed(master: int, rp_id: int) -> int:
    return int(np.random.SeedSequence([master, rp_id]).generate_state(1)[0])


def grid_from_manifest(path) -> dict:
    """rp_id -> (x_m, y_m) from a ground-truth manifest."""
    grid = {}
    with open(path) as fh:
        header = fh.readline().split("\t")
        idx = {name: i for i, name in enumerate(h.strip() for h in header)}
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            rp = int(parts[idx["rp_id"]])
            if rp not in grid:
                grid[rp] = (float(parts[idx["x_m"]]), float(parts[idx["y_m"]]))
    return grid
