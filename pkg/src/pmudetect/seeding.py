"""Deterministic seed fan-out.

A single master seed drives every stage of a run.  Each stage draws its own
child seed through a splitmix64 walk so that stages stay independently
reproducible: rerunning one stage with the same master seed always sees the
same child seed, no matter what other stages did.
"""

MASK64 = (1 << 64) - 1

# Fixed stream indices per pipeline stage.
STAGE_STREAMS = {
    "synth": 1,
    "split": 2,
    "lfm": 3,
    "sentiment": 4,
    "mlc": 5,
    "kmeans": 6,
    "eval": 7,
    "recommender": 8,
}


def splitmix64(state: int) -> int:
    """One splitmix64 step; returns the mixed output for ``state + golden``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def child_seed(master_seed: int, stream: int | str) -> int:
    """Derive the child seed for a stage from the master seed.

    ``stream`` is either a stage name from STAGE_STREAMS or a raw integer
    stream index.  The derivation walks splitmix64 ``stream`` times from the
    master seed.
    """
    if isinstance(stream, str):
        stream = STAGE_STREAMS[stream]
    s = master_seed & MASK64
    out = splitmix64(s)
    for _ in range(stream):
        s = (s + 0x9E3779B97F4A7C15) & MASK64
        out = splitmix64(s)
    return out
