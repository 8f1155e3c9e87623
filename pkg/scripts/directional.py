"""Desk-scale directional runs on the multi-synonym task.

Trains the full model (with beta 0.5 and beta 0 fine-tunes) and the plain
baseline for each seed, then sweeps decoding iterations and compares
greedy decoding with teacher-rescored length-parallel decoding.

    python3 scripts/directional.py --seeds 0 1 2 --out runs/directional
"""

import argparse
import logging
import time
from pathlib import Path

from covnat.experiments import (DirectionalSetup, kdec_sweep, lpd_comparison, prepare_data, run_seed,
                                summary_table, train_teacher)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="runs/directional")
    ap.add_argument("--skip-lpd", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    setup = DirectionalSetup()
    data = prepare_data(setup)
    t0 = time.perf_counter()
    runs = [run_seed(setup, data, s) for s in args.seeds]
    table = summary_table(runs)
    (out / "systems.tsv").write_text(table)
    print(table)
    print(f"training wall time {time.perf_counter() - t0:.0f}s")

    rows = kdec_sweep(runs[0].coverage_model, data.dev)
    sweep = "k_dec\tbleu\tlatency_ms\n" + "".join(f"{r.k}\t{r.bleu:.2f}\t{r.latency_ms:.3f}\n" for r in rows)
    (out / "kdec_sweep.tsv").write_text(sweep)
    print(sweep)

    if not args.skip_lpd:
        teacher = train_teacher(setup, data, seed=0)
        cmp = lpd_comparison(runs[0].coverage_model, teacher, data.dev, radius=4)
        line = f"greedy\t{cmp.greedy_bleu:.2f}\nlpd_r{cmp.radius}\t{cmp.lpd_bleu:.2f}\n"
        (out / "lpd.tsv").write_text(line)
        print(line)


if __name__ == "__main__":
    main()
