"""802.11b DSSS beacon receiver and WLAN fingerprinting positioning toolkit.

The package splits into a bit-exact framing layer (`frames`), the chip-level
modem (`modem`, `resample`), a multipath channel simulator used as the
ground-truth oracle (`channel`), the burst receiver chain (`rxchain`), a
streaming capture engine (`engine`), and the fingerprinting classifier stack
(`fingerprint`).  `cli` ties the workflow together.
"""

__version__ = "0.1.0"
