"""Raw INT16 interleaved I/Q capture files with a JSON sidecar.

File body: little-endian signed 16-bit pairs (I then Q), no header.  The
sidecar `<path>.json` carries the sample rate and the float-to-int16 scale;
defaults are 25 MHz and 8192 when it is absent.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_RATE = 25e6
DEFAULT_SCALE = 8192.0


@dataclass(frozen=True)
class CaptureInfo:
    sample_rate_hz: float
    scale: float
    n_samples: int


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_capture(path, samples: np.ndarray, sample_rate_hz: float,
                  scale: float = DEFAULT_SCALE) -> None:
    path = Path(path)
    interleaved = np.empty(2 * samples.size, dtype=np.int16)
    scaled_re = np.clip(np.round(samples.real * scale), -32768, 32767)
    scaled_im = np.clip(np.round(samples.imag * scale), -32768, 32767)
    interleaved[0::2] = scaled_re.astype(np.int16)
    interleaved[1::2] = scaled_im.astype(np.int16)
    try:
        interleaved.tofile(path)
        sidecar_path(path).write_text(json.dumps(
            {"sample_rate_hz": float(sample_rate_hz),
             "scale": float(scale)}) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing capture {path}: {exc}") from exc


def capture_info(path) -> CaptureInfo:
    path = Path(path)
    n_bytes = path.stat().st_size
    if n_bytes % 4:
        raise ValueError(
            f"{path}: size {n_bytes} is not a whole number of I/Q int16 pairs")
    rate, scale = DEFAULT_SAMPLE_RATE, DEFAULT_SCALE
    sc = sidecar_path(path)
    if sc.exists():
        meta = json.loads(sc.read_text())
        rate = float(meta.get("sample_rate_hz", rate))
        scale = float(meta.get("scale", scale))
    return CaptureInfo(rate, scale, n_bytes // 4)


def read_capture(path) -> tuple:
    """Whole-file read -> (complex64 samples, CaptureInfo)."""
    info = capture_info(path)
    raw = np.fromfile(path, dtype=np.int16)
    samples = raw.astype(np.float32).view(np.complex64) / np.float32(info.scale)
    return samples, info


def iter_capture_blocks(path, block_samples: int):
    """Yield complex64 blocks of at most block_samples samples."""
    info = capture_info(path)
    inv = np.float32(1.0 / info.scale)
    with open(path, "rb") as fh:
        while True:
            raw = np.fromfile(fh, dtype=np.int16, count=2 * block_samples)
            if raw.size == 0:
                return
            if raw.size % 2:
                raw = raw[:-1]
            yield raw.astype(np.float32).view(np.complex64) * inv
