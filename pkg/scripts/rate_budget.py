"""Detection, raw-bit and unbiased-bit rates as a function of transmittance and pump power.

    python scripts/rate_budget.py --seconds 2
"""

import argparse
import sys

from spqrng.extract import bias, extract_bits
from spqrng.source_sim import PS_PER_S, EmitterConfig, expected_detected_rate, simulate


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--transmittance", type=float, nargs="*", default=[0.5, 0.5814, 0.7])
    ap.add_argument("--power-mw", type=float, nargs="*", default=[1.0, 3.0, 9.0])
    args = ap.parse_args(argv)
    dur = int(args.seconds * PS_PER_S)

    print(f"{'P mW':>6}{'t':>8}{'signal MHz':>12}{'detected MHz':>14}{'model MHz':>11}"
          f"{'P(0)':>8}{'unbiased kHz':>14}{'ratio':>8}")
    for power in args.power_mw:
        for t in args.transmittance:
            cfg = EmitterConfig.device(excitation_power_mw=power, transmittance=t,
                                      duration_ps=dur, seed=args.seed)
            raw, unb = extract_bits(simulate(cfg))
            print(f"{power:>6.2f}{t:>8.4f}{cfg.signal_rate_hz / 1e6:>12.3f}"
                  f"{raw.n / args.seconds / 1e6:>14.4f}{expected_detected_rate(cfg) / 1e6:>11.4f}"
                  f"{bias(raw)[0]:>8.4f}{unb.n / args.seconds / 1e3:>14.1f}{unb.n / raw.n:>8.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
