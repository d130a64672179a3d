"""Independent recomputation of the hash embedder's vectors.

Prints the frozen values used by embed_test.cpp. Written from the
description of the scheme (FNV-1a 64 over the UTF-8 piece, splitmix64
mixing with the seed, k = min(8, d) distinct coordinates set to
+-1/sqrt(k)), not from the C++ source.
"""
import numpy as np

M = (1 << 64) - 1


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & M
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & M
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & M
    return x ^ (x >> 31)


def fnv1a64(data: bytes):
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & M
    return h


def token_vector(piece: str, seed: int, d: int):
    k = min(8, d)
    v = np.zeros(d, dtype=np.float32)
    scale = np.float32(1.0 / np.sqrt(k))
    state = splitmix64(fnv1a64(piece.encode("utf-8")) ^ splitmix64(seed))
    placed = 0
    while placed < k:
        state = splitmix64(state)
        c = state % d
        if v[c] != 0:
            continue
        v[c] = -scale if state >> 63 else scale
        placed += 1
    return v


if __name__ == "__main__":
    seed, d = 7, 16
    a = token_vector("كتب", seed, d)
    b = token_vector("##ون", seed, d)
    cls = ((a.astype(np.float64) + b.astype(np.float64)) / 2).astype(np.float32)
    for name, v in [("first", a), ("second", b), ("cls", cls)]:
        print(name, "{" + ", ".join(f"{x:.9g}f" for x in v) + "}")
