"""Simulate the antibunching measurement and print raw and background-corrected g2(0).

    python scripts/reproduce_g2.py --seconds 60 --csv g2.csv
"""

import argparse
import sys

from spqrng.hbt import CoincidenceAccumulator, correct_curve, normalize_g2, write_g2_csv
from spqrng.source_sim import PS_PER_S, EmitterConfig, iter_simulate


def run(cfg: EmitterConfig, bin_ps: int, half_bins: int):
    acc = CoincidenceAccumulator(bin_ps, bin_ps * half_bins)
    for t, ch in iter_simulate(cfg):
        acc.add(t, ch)
    raw = normalize_g2(acc.histogram(cfg.duration_ps))
    return raw, correct_curve(raw, cfg.snr)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=20.0)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--bin-ps", type=int, default=176)
    ap.add_argument("--half-bins", type=int, default=100)
    ap.add_argument("--background-hz", type=float, nargs="*", default=[0.0, 0.3e6, 0.6e6])
    ap.add_argument("--csv", help="write the curves of the last background level here")
    args = ap.parse_args(argv)

    print(f"{'background':>12}{'rho':>8}{'raw g2(0)':>12}{'1-rho^2':>10}{'corrected':>12}{'sigma':>9}")
    for bg in args.background_hz:
        cfg = EmitterConfig.device(background_rate_hz=bg, dark_rate_hz=0.0 if bg == 0 else 50.0,
                                  duration_ps=int(args.seconds * PS_PER_S), seed=args.seed)
        raw, corr = run(cfg, args.bin_ps, args.half_bins)
        print(f"{bg / 1e6:>10.2f}MHz{cfg.snr:>8.3f}{raw.at(0):>12.4f}{1 - cfg.snr ** 2:>10.4f}"
              f"{corr.at(0):>12.4f}{corr.sigma_at(0):>9.4f}")
    if args.csv:
        with open(args.csv, "w") as fh:
            write_g2_csv(fh, raw, corr, [f"seconds={args.seconds} seed={args.seed}"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
