"""Run the 8-test battery on simulator output and on an i.i.d. reference with the same bias.

    python scripts/battery_desk.py --sequences 100 --length 100000
"""

import argparse
import sys

import numpy as np

from spqrng.extract import BitSequence, extract_bits, von_neumann
from spqrng.source_sim import PS_PER_S, EmitterConfig, simulate
from spqrng.sts import run_battery


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sequences", type=int, default=100)
    ap.add_argument("--length", type=int, default=100_000)
    ap.add_argument("--transmittance", type=float, default=0.5814)
    ap.add_argument("--dead-time-ps", type=int, default=30_000)
    ap.add_argument("--seed", type=int, default=77)
    args = ap.parse_args(argv)
    need = args.sequences * args.length

    # unbiased yield is about a quarter of the detections
    seconds = 1.2 * need / (0.25 * 2.3e6)
    cfg = EmitterConfig.device(transmittance=args.transmittance, dead_time_ps=args.dead_time_ps,
                              duration_ps=int(seconds * PS_PER_S), seed=args.seed)
    raw, unbiased = extract_bits(simulate(cfg))
    print(f"simulator, dead time {args.dead_time_ps} ps, {unbiased.n:,} unbiased bits")
    print(run_battery(unbiased, args.length, args.sequences).format_table())

    p1 = 1.0 - args.transmittance
    x = (np.random.default_rng(args.seed).random(int(2.2 * need / (2 * p1 * (1 - p1)))) < p1)
    ref = von_neumann(BitSequence.from_array(x.astype(np.uint8)))
    print(f"\ni.i.d. source with P(1) = {p1:.4f}, {ref.n:,} unbiased bits")
    print(run_battery(ref, args.length, args.sequences).format_table())
    return 0


if __name__ == "__main__":
    sys.exit(main())
