"""Plot episode-reward curves from one or more ``metrics.csv`` files.

    python3 scripts/plot_metrics.py runs/cur/seed_0/metrics.csv runs/base/seed_0/metrics.csv \
        --window 20 --out rewards.png
"""

from __future__ import annotations

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from mobilecl.metrics import read_metrics  # noqa: E402


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("metrics", nargs="+")
    ap.add_argument("--window", type=int, default=20, help="moving-average window in episodes")
    ap.add_argument("--out", default="rewards.png")
    args = ap.parse_args()

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for path in args.metrics:
        rows = read_metrics(path)
        if not rows:
            continue
        steps = np.array([r.env_step for r in rows])
        rewards = np.array([r.mean_episode_reward for r in rows])
        w = min(args.window, len(rewards))
        smooth = np.convolve(rewards, np.ones(w) / w, mode="valid")
        ax.plot(steps[w - 1 :], smooth, label=rows[0].run_id)
        # mark stage boundaries of curriculum runs
        for k in range(1, len(rows)):
            if rows[k].phase != rows[k - 1].phase:
                ax.axvline(rows[k].env_step, color="grey", lw=0.5, alpha=0.5)
    ax.set_xlabel("env steps")
    ax.set_ylabel(f"episode reward ({args.window}-episode mean)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
