"""Compare held-out signed error of asymmetric-loss and squared-loss training."""

import argparse

from rulnet.sanity import asymmetry_check

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("seeds", nargs="*", type=int, default=[0, 1, 2])
for seed in ap.parse_args().seeds:
    r = asymmetry_check(seed)
    print(f"seed {seed}: mean error asym {r.mean_error_asym:+.2f} (rmse {r.rmse_asym:.2f}) | "
          f"squared {r.mean_error_squared:+.2f} (rmse {r.rmse_squared:.2f}) | "
          f"{r.n_holdout_windows} held-out windows", flush=True)
