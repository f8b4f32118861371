"""Rational polyphase resampling with exact streaming/one-shot equivalence.

The prototype lowpass is a Kaiser-windowed FIR whose half-length is a
multiple of the decimation factor, so the group delay is an integer number
of output samples and is trimmed exactly.  Feeding a stream through
`Resampler.feed` block by block and then `flush` yields the same samples as
`Resampler.apply` on the concatenated input: floor(n_in * up / down) outputs
time-aligned with the input.
"""

from functools import lru_cache
from math import ceil, gcd

import numpy as np
from scipy.signal import firwin, upfirdn


@lru_cache(maxsize=8)
def _design(up: int, down: int, cutoff_scale: float, atten_db: float):
    # half-length a multiple of down => integer output-domain group delay
    half = down * ceil((31 * up + 1) / (2 * down))
    cutoff = cutoff_scale * min(1.0 / up, 1.0 / down)
    beta = 0.1102 * (atten_db - 8.7)
    taps = firwin(2 * half + 1, cutoff, window=("kaiser", beta), fs=2.0)
    taps = (taps * up).astype(np.float32)
    taps.setflags(write=False)
    return taps, half // down


class Resampler:
    """Streaming rational resampler (rate * up / down)."""

    def __init__(self, up: int, down: int, cutoff_scale: float = 0.91,
                 atten_db: float = 70.0):
        g = gcd(up, down)
        self.up = up // g
        self.down = down // g
        self.taps, self.delay_out = _design(self.up, self.down,
                                            cutoff_scale, atten_db)
        self.reset()

    def reset(self):
        self._buf = np.zeros(0, dtype=np.complex64)
        self._buf_base = 0      # absolute input index of _buf[0]
        self._in_count = 0
        self._out_count = 0     # absolute output index, pre-trim

    def _emittable(self) -> int:
        # output m needs upsampled index m*down strictly below in_count*up
        return (self._in_count * self.up - 1) // self.down + 1

    def feed(self, block) -> np.ndarray:
        """Push input samples, return whatever output samples are ready."""
        block = np.asarray(block, dtype=np.complex64)
        if block.size:
            self._buf = np.concatenate([self._buf, block])
            self._in_count += block.size
        return self._drain(self._emittable())

    def flush(self) -> np.ndarray:
        """Zero-pad the tail and emit the remaining time-aligned outputs."""
        want = self.delay_out + (self._in_count * self.up) // self.down
        pad = ceil(len(self.taps) / self.up) + self.down
        self._buf = np.concatenate([self._buf, np.zeros(pad, np.complex64)])
        self._in_count += pad
        return self._drain(min(want, self._emittable()))

    def _drain(self, target: int) -> np.ndarray:
        first = max(self._out_count, self.delay_out)  # trim group delay
        if target <= first:
            self._out_count = max(self._out_count, target)
            self._discard(max(target, self.delay_out))
            return np.zeros(0, dtype=np.complex64)
        # buffer base is a multiple of down, so local upfirdn output index 0
        # coincides with absolute output index buf_base*up/down
        base_out = (self._buf_base * self.up) // self.down
        y = upfirdn(self.taps, self._buf, self.up, self.down)
        out = y[first - base_out: target - base_out].astype(np.complex64)
        self._out_count = target
        self._discard(target)
        return out

    def _discard(self, next_out: int):
        # keep enough history to compute output next_out later, with the new
        # base still a multiple of down
        L = len(self.taps)
        need_from = max(0, (next_out * self.down - (L - 1)) // self.up)
        keep_from = (need_from // self.down) * self.down
        if keep_from > self._buf_base:
            self._buf = self._buf[keep_from - self._buf_base:]
            self._buf_base = keep_from

    def apply(self, x) -> np.ndarray:
        """One-shot resample of a whole array."""
        self.reset()
        head = self.feed(x)
        tail = self.flush()
        self.reset()
        return np.concatenate([head, tail])


def resample_25_to_22(stream) -> np.ndarray:
    """Capture-rate 25 MHz to the 22 MHz DSSS processing rate."""
    return Resampler(22, 25).apply(stream)


def resample_22_to_25(stream) -> np.ndarray:
    return Resampler(25, 22).apply(stream)
