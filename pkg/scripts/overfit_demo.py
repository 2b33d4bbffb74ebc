"""Overfit a reduced model on a 10-engine noise-free fleet, for one or more seeds."""

import argparse

from rulnet.sanity import overfit_check

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("seeds", nargs="*", type=int, default=[0])
for seed in ap.parse_args().seeds:
    r = overfit_check(seed)
    verdict = "ok" if r.train_loss < 0.05 and r.train_rmse < 2 else "above target"
    print(f"seed {seed}: loss {r.train_loss:.4f} rmse {r.train_rmse:.3f} "
          f"epochs {r.epochs} windows {r.n_windows} {r.seconds:.0f}s ({verdict})", flush=True)
