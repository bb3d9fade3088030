"""Lambda sweep on the synthetic training corpus and the fit of the lambda
model.  With --install the fitted model replaces the bundled default.

    python3 scripts/sweep.py --out sweep.csv --model lambda_model.json
"""

import argparse
import time
from pathlib import Path

from linecodec.experiments import training_corpus
from linecodec.rdo import sweep_and_fit, write_grid_csv, write_optima_csv

BUNDLED = Path(__file__).resolve().parents[1] / "src" / "linecodec" / "default_lambda_model.json"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="sweep.csv")
    ap.add_argument("--model", default="lambda_model.json")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--install", action="store_true")
    a = ap.parse_args()
    t0 = time.time()
    model, rows, opt = sweep_and_fit(training_corpus(), threads=a.threads)
    out = Path(a.out)
    write_optima_csv(opt, out)
    write_grid_csv(rows, out.with_name(out.stem + "_grid.csv"))
    model.save(a.model)
    for r in opt:
        print(f"lambda {r.lam:4g}  qg* {r.q_g:4g}  T* {r.T:8.3f}  rds {r.rds:8.3f}")
    print("qg coeffs", model.qg_coeffs, "T coeffs", model.t_coeffs,
          "monotone", model.check_monotone(), f"({time.time() - t0:.0f} s)")
    if a.install:
        model.save(BUNDLED)


if __name__ == "__main__":
    main()
