"""SplitMix64 mixing, used wherever a seed or a string must become bits.

Everything here is integer-exact, so results agree across platforms.
"""

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """The SplitMix64 output finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance ``state`` one step; returns ``(new_state, output)``."""
    state = (state + GOLDEN) & MASK64
    return state, mix64(state)


def hash_bytes(data: bytes, seed: int = 0) -> int:
    """Fold bytes into a 64-bit hash, one SplitMix64 step per byte."""
    h = seed & MASK64
    for byte in data:
        h = mix64((h ^ byte) + GOLDEN)
    # length is folded in so prefixes of zero bytes do not collide
    return mix64(h ^ len(data))


def derive_seed(seed: int, index: int) -> int:
    return mix64((seed & MASK64) ^ mix64(index + GOLDEN))


def uniform_stream(state: int, n: int) -> list[float]:
    """``n`` floats uniform in [-1, 1), from the top 53 bits of each draw."""
    out = []
    for _ in range(n):
        state, z = splitmix64(state)
        out.append((z >> 11) * (2.0 / (1 << 53)) - 1.0)
    return out
