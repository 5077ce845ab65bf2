"""Optional rendering of experiment output files to PNG figures.

Imported lazily by the command line so matplotlib is only required when
figures are requested. Each renderer reads a file written by the
experiments module and saves a PNG next to it, returning the PNG path.
"""

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .experiments import read_csv


def _out_path(data_path, out_path):
    if out_path is not None:
        return Path(out_path)
    data_path = Path(data_path)
    return data_path.with_name(data_path.stem.split(".")[0] + ".png")


def render_cdf(csv_path, out_path=None):
    """Step plot of the empirical SE distribution."""
    meta, _, rows = read_csv(csv_path)
    values = [row[0] for row in rows]
    cdf = [row[1] for row in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step(values, cdf, where="post")
    ax.set_xlabel(f"{meta.get('metric', 'sum')} SE (bit/s/Hz)")
    ax.set_ylabel("CDF")
    ax.set_title(meta.get("experiment", "cdf"))
    ax.grid(True, alpha=0.3)
    out = _out_path(csv_path, out_path)
    fig.savefig(out, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return out


def render_sweep(csv_path, out_path=None):
    """Error-bar plot of mean sum SE against the swept variable."""
    meta, _, rows = read_csv(csv_path)
    grid = [row[0] for row in rows]
    mean = [row[1] for row in rows]
    err = [row[2] for row in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(grid, mean, yerr=err, marker="o", capsize=3)
    ax.set_xlabel(meta.get("variable", "value"))
    ax.set_ylabel("mean sum SE (bit/s/Hz)")
    ax.set_title(meta.get("experiment", "sweep"))
    ax.grid(True, alpha=0.3)
    out = _out_path(csv_path, out_path)
    fig.savefig(out, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return out


def render_optimizer(json_path, out_path=None):
    """Objective traces and the paired minimum-SE distributions."""
    with open(json_path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))
    for run in payload["runs"]:
        left.plot(range(len(run["trace"])), run["trace"], alpha=0.6)
    left.set_xlabel("outer iteration")
    left.set_ylabel("worst-user SINR")
    left.set_title("objective traces")
    left.grid(True, alpha=0.3)
    for key, label in (("baseline_min_se_sorted", "EPC + RBF"),
                       ("ao_min_se_sorted", "optimized")):
        values = payload[key]
        cdf = [(i + 1) / len(values) for i in range(len(values))]
        right.step(values, cdf, where="post", label=label)
    right.set_xlabel("minimum SE (bit/s/Hz)")
    right.set_ylabel("CDF")
    right.set_title("paired minimum SE")
    right.legend()
    right.grid(True, alpha=0.3)
    fig.suptitle(payload.get("experiment", "optimize"))
    out = _out_path(json_path, out_path)
    fig.savefig(out, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return out


def render_validate(csv_path, out_path=None):
    """Scatter of relative deviations by SINR group."""
    meta, _, rows = read_csv(csv_path)
    groups = []
    for row in rows:
        if row[2] not in groups:
            groups.append(row[2])
    fig, ax = plt.subplots(figsize=(7, 4))
    for index, group in enumerate(groups):
        devs = [row[5] for row in rows if row[2] == group]
        ax.scatter([index] * len(devs), devs, alpha=0.7)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(range(len(groups)))
    ax.set_xticklabels(groups, rotation=30)
    ax.set_ylabel("relative deviation")
    ax.set_title(f"{meta.get('experiment', 'validate')} "
                 f"({meta.get('trials', '?')} trials)")
    ax.grid(True, alpha=0.3)
    out = _out_path(csv_path, out_path)
    fig.savefig(out, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return out
