"""Compare the compiled and pure-Python bencode decoders.

    python3 benchmarks/bench_bencode.py [--repeat N]

Inputs: a generated sync.dat, a wide dict of short strings, and a deep
nested list. Reports the best-of-N time per decode and the speed-up.
"""
import argparse
import random
import tempfile
import timeit
from pathlib import Path

from btsync_forensics import bencode, fixtures


def inputs():
    with tempfile.TemporaryDirectory() as tmp:
        fixtures.gen_case(0, "MultiShareLan", tmp)
        sync = (Path(tmp) / "dats" / "sync.dat").read_bytes()
    rng = random.Random(0)
    wide = bencode.encode({rng.randbytes(8): [rng.randbytes(20), rng.randrange(1 << 40)] for _ in range(5000)})
    deep = bencode.encode([[[[[[i, b"x" * (i % 30)]]]]] for i in range(5000)])
    return {"sync.dat": sync, "wide dict": wide, "nested lists": deep}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = ["python"] + (["cython"] if bencode.BACKEND == "cython" else [])
    if len(backends) == 1:
        print("compiled kernel not built; timing the pure-Python decoder only")
    print(f"{'input':<14}{'bytes':>10}" + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speed-up':>10}")
    for name, data in inputs().items():
        assert len({repr(bencode.decode_with(b, data).value) for b in backends}) == 1
        times = []
        for b in backends:
            number = max(1, int(2e5 // len(data)))
            t = min(timeit.repeat(lambda: bencode.decode_with(b, data), number=number, repeat=args.repeat)) / number
            times.append(t)
        speed = f"{times[0] / times[-1]:.1f}x" if len(times) > 1 else "-"
        print(f"{name:<14}{len(data):>10}" + "".join(f"{t * 1e3:>14.3f}" for t in times) + f"{speed:>10}")


if __name__ == "__main__":
    main()
