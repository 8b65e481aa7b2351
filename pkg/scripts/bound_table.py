"""Sure bound on mean permutations per hypothesis next to the classical budget."""

import argparse

from seqperm.sim import adversarial_bound_check, worst_bound_figure


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--alpha", type=float, default=0.1)
    ap.add_argument("--h", type=int, default=10)
    ap.add_argument("--check-M", type=int, default=200)
    args = ap.parse_args()
    print("M\tclassical_B\tavbc_mean_bound")
    for M, B, w in worst_bound_figure(args.alpha, args.h):
        print(f"{M}\t{B}\t{w:.2f}")
    rep = []
    ok = adversarial_bound_check(args.check_M, args.h, args.alpha, trials=9, report=rep)
    for name, tbar, bound in rep:
        print(f"{name}\t{tbar:.2f}\t<= {bound:.2f}")
    print("all within bound" if ok else "BOUND VIOLATED")


if __name__ == "__main__":
    main()
