"""Full FD001 run with the default training protocol (hours on a CPU).

Expects train_FD001.txt, test_FD001.txt and RUL_FD001.txt in --data-dir.
Writes the preprocess/train/evaluate outputs under --out and records
whether test RMSE and S-score land in the expected band. The band is
informational; the script exits 0 either way.
"""

import argparse
import json
import sys
from pathlib import Path

from rulnet.cli import main as cli

RMSE_BAND = (15.0, 23.0)
S_SCORE_BAND = (700.0, 1600.0)


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", default="data")
    ap.add_argument("--out", default=None, help="defaults to <data-dir>/fd001_run")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--max-epochs", type=int, default=200)
    args = ap.parse_args(argv)
    data = Path(args.data_dir)
    out = Path(args.out) if args.out else data / "fd001_run"
    pp, run_dir = out / "preprocessed", out / "train"

    steps = [
        ["preprocess", "--train", str(data / "train_FD001.txt"), "--test", str(data / "test_FD001.txt"),
         "--truth", str(data / "RUL_FD001.txt"), "--out", str(pp)],
        ["train", "--data", str(pp), "--out", str(run_dir), "--seed", str(args.seed),
         "--max-epochs", str(args.max_epochs)],
        ["evaluate", "--checkpoint", str(run_dir / "checkpoint.bin"), "--data", str(pp),
         "--out", str(out)],
    ]
    for step in steps:
        if cli(step) != 0:
            return 1

    metrics = json.loads((out / "metrics.json").read_text())
    verdict = {
        "rmse": metrics["rmse"], "s_score": metrics["s_score"],
        "rmse_band": RMSE_BAND, "s_score_band": S_SCORE_BAND,
        "rmse_in_band": RMSE_BAND[0] <= metrics["rmse"] <= RMSE_BAND[1],
        "s_score_in_band": S_SCORE_BAND[0] <= metrics["s_score"] <= S_SCORE_BAND[1],
    }
    manifest_path = out / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["reproduction_band"] = verdict
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(json.dumps(verdict, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(run())
