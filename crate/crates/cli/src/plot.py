#!/usr/bin/env python3
"""Validation accuracy against wall-clock time for one or more run directories.

usage: python3 plot.py [RUN_DIR ...] [-o plot.png]
"""
import argparse
import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def label(run):
    manifest = os.path.join(run, "manifest.txt")
    if os.path.exists(manifest):
        with open(manifest) as f:
            first = f.readline().lstrip("# ").strip()
            if first:
                return f"{first} ({os.path.basename(os.path.abspath(run))})"
    return run


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    ap = argparse.ArgumentParser()
    ap.add_argument("runs", nargs="*", default=[here])
    ap.add_argument("-o", "--output", default=os.path.join(here, "plot.png"))
    args = ap.parse_args()

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run in args.runs:
        with open(os.path.join(run, "metrics.csv")) as f:
            rows = list(csv.DictReader(f))
        t = [max(float(r["wall_ms"]) / 1e3, 1e-3) for r in rows]
        acc = [100 * float(r["acc"]) for r in rows]
        ax.plot(t, acc, marker="o", markersize=3, label=label(run))
    ax.set_xscale("log")
    ax.set_xlabel("wall time (s)")
    ax.set_ylabel("validation accuracy (%)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
