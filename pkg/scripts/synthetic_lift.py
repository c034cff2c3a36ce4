"""Mean accuracy of ikSVM vs the MRF regimes on synthetic data, over seeds and noise levels.

    python scripts/synthetic_lift.py --n 1000 --seeds 0 1 2 --noise 0 0.15 0.3
"""
import argparse
import logging
import time

import numpy as np

from pedattr.pipeline import RunConfig, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--attrs", type=int, default=4)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.15])
    ap.add_argument("--regimes", nargs="+", default=["iksvm", "mrfg2", "mrfr1", "mrfr2"])
    ap.add_argument("--scheme", default="fore+whole")
    ap.add_argument("--tree-depth", type=int)
    ap.add_argument("--cache-dir")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    extra = {"tree_depth": args.tree_depth} if args.tree_depth else {}
    print("noise  seed  " + "  ".join(f"{r:>7}" for r in args.regimes) + "   secs")
    for noise in args.noise:
        rows = []
        for seed in args.seeds:
            t0 = time.perf_counter()
            rep = run_pipeline(RunConfig(synth_n=args.n, synth_attrs=args.attrs, synth_noise=noise,
                                         seed=seed, regimes=tuple(args.regimes),
                                         schemes=(args.scheme,), cache_dir=args.cache_dir, **extra))
            accs = [rep.mean_accuracy(r, rep.columns[0][1]) for r in args.regimes]
            rows.append(accs)
            print(f"{noise:5.2f}  {seed:4d}  " + "  ".join(f"{a:7.2f}" for a in accs)
                  + f"  {time.perf_counter() - t0:5.0f}", flush=True)
        mean = np.mean(rows, axis=0)
        print(f"{noise:5.2f}  mean  " + "  ".join(f"{a:7.2f}" for a in mean), flush=True)


if __name__ == "__main__":
    main()
