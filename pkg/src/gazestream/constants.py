"""Unit conventions and shared numeric constants.

All byte and rate arithmetic in the package goes through the constants
below so the conventions live in exactly one place:

  * 1 KB = 1024 bytes (binary kilobyte, used for packet sizes)
  * 1 Mbps = 10**6 bits per second (decimal megabit, used for link rates)

Mixing the two is the classic source of silent ~5% bookkeeping errors in
streaming simulations, hence the single authoritative definition.
"""

# Byte and bit-rate conventions.
KB = 1024                  # bytes per kilobyte (binary)
MBPS = 1_000_000           # bits per second per megabit (decimal)
BITS_PER_BYTE = 8

# Default simulated render/tick rate of the edge device, Hz.
TICK_HZ = 90.0

# Rec. 709 luma weights used to turn interpolated vertex RGB into the
# scalar luminance the perceptual model consumes.
LUMA_WEIGHTS = (0.2126, 0.7152, 0.0722)

# Serialized size of one triangle record (3 x uint32 indices) and one
# vertex record (3 x float32 position + 3 x float32 color) in the scene
# container, plus the fixed header that precedes every per-level upgrade
# payload.  The header guarantees that upgrade payloads are never empty,
# so cumulative per-level byte sizes are strictly increasing.
TRIANGLE_RECORD_BYTES = 12
VERTEX_RECORD_BYTES = 24
UPGRADE_HEADER_BYTES = 16
