"""Render figures from store artifacts.

Every figure is derived from a CSV/JSON artifact that the pipeline
already wrote; the renderer never recomputes analysis results, it only
draws them. Uses the Agg backend so it runs headless.
"""

from __future__ import annotations

import csv
import logging
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np

from . import store

log = logging.getLogger(__name__)


def _read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as fp:
        reader = csv.reader(fp)
        rows = list(reader)
    if not rows:
        return [], []
    return rows[0], rows[1:]


def _save(fig, path: str) -> str:
    store.ensure_dir(os.path.dirname(path))
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def render_distance_heatmap(distances_csv: str, out_path: str) -> str:
    _, rows = _read_csv(distances_csv)
    matrix = np.array([[float(v) for v in row[1:]] for row in rows])
    fig, ax = plt.subplots(figsize=(6, 5))
    image = ax.imshow(matrix, cmap="viridis", vmin=0.0)
    ax.set_xlabel("window")
    ax.set_ylabel("window")
    ax.set_title("window fingerprint distances")
    fig.colorbar(image, ax=ax, label="euclidean distance")
    return _save(fig, out_path)


def render_silhouette_curve(silhouette_csv: str, out_path: str) -> str:
    _, rows = _read_csv(silhouette_csv)
    by_run: dict[int, list[tuple[int, float]]] = {}
    for run, k, score in rows:
        by_run.setdefault(int(run), []).append((int(k), float(score)))
    fig, ax = plt.subplots(figsize=(6, 4))
    for run in sorted(by_run):
        pts = sorted(by_run[run])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"run {run}")
    ax.set_xlabel("k")
    ax.set_ylabel("mean silhouette")
    ax.set_ylim(-1.05, 1.05)
    ax.set_title("cluster count sweep")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, out_path)


def render_phase_timeline(phases_json: str, out_path: str) -> str:
    data = store.read_json(phases_json)
    labels = data["labels"]
    fig, ax = plt.subplots(figsize=(8, 2.5))
    ax.step(range(len(labels)), labels, where="post")
    ax.set_xlabel("window")
    ax.set_ylabel("phase")
    ax.set_yticks(sorted(set(labels)))
    ax.set_title(f"phase timeline (k={data['k']}, {data['shifts']} shifts)")
    return _save(fig, out_path)


def render_shift_histogram(hist_csv: str, out_path: str) -> str:
    _, rows = _read_csv(hist_csv)
    shifts = [int(r[0]) for r in rows]
    channels = [int(r[1]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(shifts, channels, width=0.8)
    ax.set_xlabel("phase shifts per channel")
    ax.set_ylabel("channels")
    ax.set_title("phase shift distribution")
    return _save(fig, out_path)


def render_parts_curves(parts_csv: str, out_path: str) -> str:
    header, rows = _read_csv(parts_csv)
    idx = {name: i for i, name in enumerate(header)}
    parts = [int(r[idx["part"]]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    for column in ("normal_ratio", "nmr_ratio", "unknown_ratio", "miss_ratio"):
        values = [float(r[idx[column]]) if r[idx[column]] != "" else np.nan for r in rows]
        ax.plot(parts, values, marker="o", label=column)
    ax.set_xlabel("part")
    ax.set_ylabel("ratio")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title("enforcement over time")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, out_path)


def render_anomaly_cdf(summary_json: str, out_path: str) -> str:
    data = store.read_json(summary_json)
    ratios = sorted(
        ch["anomaly_ratio"] for ch in data["channels"] if ch["anomaly_ratio"] is not None
    )
    fig, ax = plt.subplots(figsize=(6, 4))
    if ratios:
        y = np.arange(1, len(ratios) + 1) / len(ratios)
        ax.step([0.0] + ratios, [0.0] + list(y), where="post")
    ax.set_xlabel("anomaly ratio (unknown+miss+retransmit per query)")
    ax.set_ylabel("fraction of channels")
    ax.set_ylim(0, 1.05)
    ax.set_title("anomaly ratio CDF")
    ax.grid(True, alpha=0.3)
    return _save(fig, out_path)


def render_perm_scatter(perm_csv: str, out_path: str) -> str:
    header, rows = _read_csv(perm_csv)
    idx = {name: i for i, name in enumerate(header)}
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = np.arange(len(rows))
    ax.scatter(xs, [float(r[idx["r_perm"]]) for r in rows], label="k-phase model")
    if "merged_r_perm" in idx:
        ax.scatter(
            xs,
            [float(r[idx["merged_r_perm"]]) for r in rows],
            marker="x",
            label="merged single DFA",
        )
    ax.set_xticks(xs)
    ax.set_xticklabels([r[idx["channel"]] for r in rows], rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("permissiveness ratio")
    ax.set_title("model permissiveness")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, out_path)


def render_report(root: str) -> list[str]:
    """Render every figure whose source artifact exists in the store."""
    report_dir = store.ensure_dir(os.path.join(root, "report"))
    written: list[str] = []

    phases_root = os.path.join(root, "phases")
    if os.path.isdir(phases_root):
        for label in sorted(os.listdir(phases_root)):
            chan_dir = os.path.join(phases_root, label)
            if not os.path.isdir(chan_dir):
                continue
            pairs = (
                ("distances.csv", render_distance_heatmap, f"{label}_distances.png"),
                ("silhouette.csv", render_silhouette_curve, f"{label}_silhouette.png"),
                ("phases.json", render_phase_timeline, f"{label}_timeline.png"),
            )
            for name, renderer, out_name in pairs:
                src = os.path.join(chan_dir, name)
                if os.path.isfile(src):
                    written.append(renderer(src, os.path.join(report_dir, out_name)))
        hist = os.path.join(phases_root, "shifts_histogram.csv")
        if os.path.isfile(hist):
            written.append(
                render_shift_histogram(hist, os.path.join(report_dir, "shifts_histogram.png"))
            )

    enforce_root = os.path.join(root, "enforce")
    if os.path.isdir(enforce_root):
        for label in sorted(os.listdir(enforce_root)):
            parts = os.path.join(enforce_root, label, "parts.csv")
            if os.path.isfile(parts):
                written.append(
                    render_parts_curves(parts, os.path.join(report_dir, f"{label}_parts.png"))
                )
        summary = os.path.join(enforce_root, "summary.json")
        if os.path.isfile(summary):
            written.append(
                render_anomaly_cdf(summary, os.path.join(report_dir, "anomaly_cdf.png"))
            )

    perm_csv = os.path.join(root, "perm", "permissiveness.csv")
    if os.path.isfile(perm_csv):
        written.append(
            render_perm_scatter(perm_csv, os.path.join(report_dir, "permissiveness.png"))
        )

    for path in written:
        log.info("wrote %s", path)
    return written
