"""Cascade vs flat accuracy as mediation strength grows.

    python scripts/mediation_sweep.py --strengths 0,1,2,4,8 --seeds 10
"""
from __future__ import annotations

import argparse

from latentrisk.experiments import flat_study, mean_of
from latentrisk.synthgen import GeneratorConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--strengths", default="0,1,2,4,8")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--n-rows", type=int, default=1500)
    args = ap.parse_args()
    print("mediation  cascade  flat   gap")
    for m in (float(x) for x in args.strengths.split(",")):
        rows = flat_study(GeneratorConfig.learnable_latents(mediation=m, n_rows=args.n_rows),
                          range(args.seeds))
        c, f = mean_of(rows, "cascade_accuracy"), mean_of(rows, "flat_accuracy")
        print(f"{m:<9g}  {c:.3f}    {f:.3f}  {c - f:+.3f}", flush=True)


if __name__ == "__main__":
    main()
