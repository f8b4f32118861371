"""Streaming capture engine: producer / bounded FIFO / consumer.

The producer reads fixed-size sample blocks from a source (capture file or
array) into a bounded queue; the consumer resamples the 25 MHz capture rate
to 22 MHz, slides a SYNC-length detection window with SYNC-length overlap so
no burst can straddle windows undetected, and decodes detections.  Sleep
gating discards samples for a configured interval after each recorded beacon.
Decode output is bit-identical whether the two stages run on one thread or
two (the consumer logic is a pure function of block order).
"""

import queue
import threading
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import frames, iqfile, modem, rxchain
from .resample import Resampler


@dataclass(frozen=True)
class SampleBlock:
    samples: np.ndarray
    stream_offset: int          # index of first sample at the source rate
    sample_rate: float


@dataclass
class EngineConfig:
    """Software subset of the receiver front panel."""

    buffer_size: int = modem.SYNC_SAMPLE_COUNT   # detection hop, 22 MHz samples
    threshold: float = 0.85
    sleep_enabled: bool = False
    sleep_ms: float = 90.0
    max_packets: int = -1                        # -1 = unlimited
    lut_enabled: bool = False
    matched_filter_enabled: bool = True
    eq_level: str = "chip"
    n_taps: int = 5
    wlan_channel: int = 1
    output_path: str = "records.tsv"
    cal_offset_db: float = 0.0
    queue_depth: int = 64
    overflow_policy: str = "block"               # block | drop_oldest
    max_mpdu_us: int = 4096
    taps_source: str = "channel"
    pipelined: bool = True

    def rx_config(self) -> rxchain.RxConfig:
        return rxchain.RxConfig(
            threshold=rxchain.normalize_threshold(self.threshold),
            eq_level=self.eq_level,
            n_taps=self.n_taps,
            lut_enabled=self.lut_enabled,
            matched_filter_enabled=self.matched_filter_enabled,
            cal_offset_db=self.cal_offset_db,
            wlan_channel=self.wlan_channel,
            max_mpdu_us=self.max_mpdu_us,
            taps_source=self.taps_source,
        )


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def load_engine_config(path, base: EngineConfig | None = None) -> EngineConfig:
    """Parse a `key = value` text file mirroring EngineConfig fields."""
    cfg = replace(base) if base is not None else EngineConfig()
    types = {f.name: f.type for f in fields(EngineConfig)}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        kind = types[key]
        if kind in ("bool", bool):
            low = value.lower()
            if low in _BOOL_TRUE:
                parsed = True
            elif low in _BOOL_FALSE:
                parsed = False
            else:
                raise ValueError(f"{path}:{lineno}: bad boolean {value!r}")
        elif kind in ("int", int):
            parsed = int(value)
        elif kind in ("float", float):
            parsed = float(value)
        else:
            parsed = value
        setattr(cfg, key, parsed)
    return cfg


# ---------------------------------------------------------------------------
# Sources
# ---------------------------------------------------------------------------

class ArraySource:
    """In-memory sample source, mainly for tests."""

    def __init__(self, samples, sample_rate: float = modem.CAPTURE_RATE):
        self.samples = np.asarray(samples, dtype=np.complex64)
        self.sample_rate = sample_rate

    def blocks(self, block_size: int):
        for start in range(0, self.samples.size, block_size):
            yield self.samples[start:start + block_size]


class FileSource:
    """INT16 interleaved I/Q capture file (rate/scale from the sidecar)."""

    def __init__(self, path):
        self.path = Path(path)
        info = iqfile.capture_info(self.path)
        self.sample_rate = info.sample_rate_hz
        self.n_samples = info.n_samples

    def blocks(self, block_size: int):
        yield from iqfile.iter_capture_blocks(self.path, block_size)


# ---------------------------------------------------------------------------
# Session results
# ---------------------------------------------------------------------------

@dataclass
class SessionSummary:
    records: list
    rejects: dict
    n_source_samples: int
    dropped_blocks: int
    wall_seconds: float
    stream_seconds: float

    @property
    def n_records(self) -> int:
        return len(self.records)

    @property
    def packets_per_second(self) -> float:
        return self.n_records / self.wall_seconds if self.wall_seconds > 0 else 0.0


def raw_block_size(config: EngineConfig, source_rate: float) -> int:
    """Producer block size at the source rate.

    With a 25 MHz source the size is rounded up to a multiple of 25 so block
    boundaries land on exact 22/25 resampling phase, which keeps 22 MHz
    indices integral after a sleep skip.
    """
    if source_rate == modem.PROC_RATE:
        return config.buffer_size
    if source_rate == modem.CAPTURE_RATE:
        raw = (config.buffer_size * 25 + 21) // 22
        return ((raw + 24) // 25) * 25
    raise ValueError(f"unsupported source rate {source_rate}")


class _Consumer:
    """Detection scanner + decoder over the resampled stream."""

    def __init__(self, config: EngineConfig, source_rate: float):
        self.config = config
        self.rx = config.rx_config()
        self.source_rate = source_rate
        self.resampling = source_rate == modem.CAPTURE_RATE
        self.records = []
        self.rejects = {}
        self.sleep_until_raw = -1           # raw-domain wake index
        self.stop = False
        self._sync_len = modem.SYNC_SAMPLE_COUNT
        self._max_packet = (1 + frames.PLCP_BIT_COUNT + config.max_mpdu_us) \
            * modem.CHIPS_PER_SYMBOL * modem.SAMPLES_PER_CHIP
        self._mf_margin = 32
        self.gap_events = 0
        self._expected_offset = 0
        self._new_run(0)

    def _new_run(self, raw_start: int):
        # one awake stretch of contiguous samples; base22 is exact because
        # raw block boundaries are multiples of 25
        self._resampler = Resampler(22, 25) if self.resampling else None
        self._base22 = raw_start * 22 // 25 if self.resampling else raw_start
        self._buf = np.zeros(0, dtype=np.complex64)
        self._scan = self._base22
        self._pending = -1                  # detection awaiting samples

    def _sleep_check(self, block: SampleBlock) -> bool:
        """True when the whole block falls inside the sleep window."""
        if self.sleep_until_raw < 0:
            return False
        end = block.stream_offset + block.samples.size
        if end <= self.sleep_until_raw:
            return True
        self._new_run(block.stream_offset)  # wake at block granularity
        self.sleep_until_raw = -1
        return False

    def push(self, block: SampleBlock):
        if self.stop:
            return
        if block.stream_offset != self._expected_offset:
            # dropped blocks (drop_oldest policy) break stream continuity;
            # restart the run at the new offset
            self.gap_events += 1
            self._new_run(block.stream_offset)
        self._expected_offset = block.stream_offset + block.samples.size
        if self._sleep_check(block):
            return
        chunk = (self._resampler.feed(block.samples) if self.resampling
                 else block.samples)
        if chunk.size:
            self._buf = np.concatenate([self._buf, chunk])
        self._process(final=False)

    def finish(self):
        if self.stop:
            return
        if self.resampling and self.sleep_until_raw < 0:
            tail = self._resampler.flush()
            if tail.size:
                self._buf = np.concatenate([self._buf, tail])
        self._process(final=True)

    def _reject(self, reason: str):
        self.rejects[reason] = self.rejects.get(reason, 0) + 1

    def _process(self, final: bool):
        while not self.stop:
            avail = self._base22 + self._buf.size
            if self._pending >= 0:
                need = self._pending + self._max_packet + self._mf_margin
                if avail < need and not final:
                    return
                if not self._decode_pending(avail):
                    return
                continue
            # search SYNC starts in [scan, hi], capped per call so the FFT
            # stays small even when a long decode wait grew the buffer
            lo = self._scan
            hi = avail - self._sync_len
            if hi < lo:
                return
            hi_step = min(hi, lo + max(self.config.buffer_size, self._sync_len))
            window = self._buf[lo - self._base22:
                               hi_step + self._sync_len - self._base22]
            det = rxchain.detect_sync(window, self.config.threshold,
                                      earliest=True, n_rake=self.config.n_taps)
            if det is None:
                self._scan = hi_step + 1
                self._trim()
                if hi_step == hi:
                    return
                continue
            self._pending = lo + det.sample_index
            self._pending_ratio = det.peak_ratio

    def _decode_pending(self, avail: int) -> bool:
        start = self._pending
        self._pending = -1
        local = start - self._base22
        det = rxchain.DetectionResult(sample_index=local,
                                      peak_ratio=self._pending_ratio)
        result = rxchain.decode_packet(self._buf, det, self.rx,
                                       time_s=start / modem.PROC_RATE)
        if result.record is not None:
            self.records.append(result.record)
            consumed = result.diagnostics.get("packet_samples", self._sync_len)
            self._scan = start + consumed
            if self.config.sleep_enabled:
                wake22 = start + int(round(self.config.sleep_ms * 1e-3
                                           * modem.PROC_RATE))
                self.sleep_until_raw = (
                    -(-wake22 * 25 // 22) if self.resampling else wake22)
                self.stop_run_for_sleep()
            if 0 <= self.config.max_packets <= len(self.records):
                self.stop = True
            self._trim()
            return True
        self._reject(result.reason)
        skip = result.diagnostics.get("packet_samples")
        self._scan = start + (skip if skip else self._sync_len)
        self._trim()
        return True

    def stop_run_for_sleep(self):
        self._buf = np.zeros(0, dtype=np.complex64)
        self._scan = self._base22 = 0
        self._pending = -1

    def _trim(self):
        keep_from = min(self._scan,
                        self._pending if self._pending >= 0 else self._scan)
        keep_from -= self._sync_len + self._mf_margin
        cut = keep_from - self._base22
        if cut > 4 * self._sync_len:
            self._buf = self._buf[cut:]
            self._base22 += cut


_SENTINEL = None


def run(source, config: EngineConfig) -> SessionSummary:
    """Run the capture session; returns the summary (records not yet written)."""
    t0 = time.perf_counter()
    block_size = raw_block_size(config, source.sample_rate)
    consumer = _Consumer(config, source.sample_rate)
    n_samples = 0
    dropped = 0

    if not config.pipelined:
        offset = 0
        for samples in source.blocks(block_size):
            block = SampleBlock(samples, offset, source.sample_rate)
            offset += samples.size
            consumer.push(block)
            if consumer.stop:
                break
        n_samples = offset
        consumer.finish()
    else:
        fifo = queue.Queue(maxsize=config.queue_depth)
        stop_event = threading.Event()
        drop_count = [0]

        def producer():
            offset = 0
            for samples in source.blocks(block_size):
                block = SampleBlock(samples, offset, source.sample_rate)
                offset += samples.size
                while not stop_event.is_set():
                    try:
                        fifo.put(block, timeout=0.05)
                        break
                    except queue.Full:
                        if config.overflow_policy == "drop_oldest":
                            try:
                                fifo.get_nowait()
                                drop_count[0] += 1
                            except queue.Empty:
                                pass
                        # block policy: retry until space or stop
                if stop_event.is_set():
                    break
            fifo.put(_SENTINEL)

        thread = threading.Thread(target=producer, daemon=True)
        thread.start()
        while True:
            block = fifo.get()
            if block is _SENTINEL:
                break
            n_samples = max(n_samples, block.stream_offset + block.samples.size)
            consumer.push(block)
            if consumer.stop:
                stop_event.set()
        stop_event.set()
        # drain so the producer can place its sentinel and exit
        while thread.is_alive():
            try:
                fifo.get_nowait()
            except queue.Empty:
                pass
            thread.join(timeout=0.01)
        consumer.finish()
        dropped = drop_count[0]

    wall = time.perf_counter() - t0
    return SessionSummary(
        records=consumer.records,
        rejects=consumer.rejects,
        n_source_samples=n_samples,
        dropped_blocks=dropped,
        wall_seconds=wall,
        stream_seconds=n_samples / source.sample_rate if n_samples else 0.0,
    )


# ---------------------------------------------------------------------------
# Record persistence (Figure-6 style TSV)
# ---------------------------------------------------------------------------

def records_header(n_taps: int) -> list:
    cols = ["Time", "SSID", "MAC-ID", "Chan", "RSSI"]
    for t in range(1, n_taps + 1):
        cols += [f"real{t}", f"imag{t}"]
    return cols


def write_records(records, path, n_taps: int = 5) -> None:
    """Tab-delimited records: Time, SSID, MAC-ID, Chan, RSSI, re/im per tap."""
    path = Path(path)
    try:
        with open(path, "w") as fh:
            fh.write("\t".join(records_header(n_taps)) + "\n")
            for rec in records:
                vals = [f"{rec.time_s:.4f}", rec.ssid,
                        frames.mac_to_str(rec.mac), str(rec.channel),
                        f"{rec.rssi_dbm:.4f}"]
                taps = np.asarray(rec.taps)
                for t in range(n_taps):
                    tap = taps[t] if t < taps.size else 0j
                    vals += [f"{tap.real:.4f}", f"{tap.imag:.4f}"]
                fh.write("\t".join(vals) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing records {path}: {exc}") from exc


def read_records(path) -> list:
    """Read a records TSV back into MeasurementRecord values."""
    records = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        n_taps = sum(1 for c in header if c.startswith("real"))
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            taps = np.array([complex(float(parts[5 + 2 * t]),
                                     float(parts[6 + 2 * t]))
                             for t in range(n_taps)])
            records.append(rxchain.MeasurementRecord(
                time_s=float(parts[0]), ssid=parts[1],
                mac=frames.mac_from_str(parts[2]), channel=int(parts[3]),
                rssi_dbm=float(parts[4]), taps=taps))
    return records


def numbered_output_path(base, location_index: int) -> Path:
    """records.tsv -> records_007.tsv (per-location file suffixing)."""
    base = Path(base)
    return base.with_name(f"{base.stem}_{location_index:03d}{base.suffix}")
