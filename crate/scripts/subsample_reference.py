"""Independent reference for the seeded subsample and calibration split.

Reimplements SplitMix64, Lemire's bounded draw and the back-to-front
Fisher-Yates shuffle with Python integers, then prints the values pinned in
crates/core/tests/derived.rs.

    python3 scripts/subsample_reference.py crates/core/tests/fixtures/offline/items.jsonl
"""

import json
import sys

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next_u64(self):
        self.state = (self.state + GAMMA) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def next_below(self, bound):
        m = self.next_u64() * bound
        low = m & MASK
        if low < bound:
            threshold = ((1 << 64) - bound) % bound
            while low < threshold:
                m = self.next_u64() * bound
                low = m & MASK
        return m >> 64

    def shuffle(self, values):
        for i in range(len(values) - 1, 0, -1):
            j = self.next_below(i + 1)
            values[i], values[j] = values[j], values[i]


def subsample(ids, n, seed):
    idx = list(range(len(ids)))
    SplitMix64(seed).shuffle(idx)
    return [ids[i] for i in sorted(idx[:n])]


def calibration_split(n, seed):
    idx = list(range(n))
    SplitMix64(seed).shuffle(idx)
    return sorted(idx[: n // 2]), sorted(idx[n // 2 :])


def main():
    with open(sys.argv[1]) as f:
        ids = [json.loads(line)["id"] for line in f if line.strip()]
    for n, seed in [(5, 7), (2, 7), (10, 0), (20, 123)]:
        print(f"subsample n={n} seed={seed}: {subsample(ids, n, seed)}")
    for n, seed in [(10, 11), (7, 3)]:
        print(f"calibration_split n={n} seed={seed}: {calibration_split(n, seed)}")
    rng = SplitMix64(7)
    print("splitmix seed=7 first outputs:", [rng.next_u64() for _ in range(3)])


if __name__ == "__main__":
    main()
