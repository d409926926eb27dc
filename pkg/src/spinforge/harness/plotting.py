"""SVG rendering for run outputs. Every curve is read back from the CSV it
was written to, so plots are strictly derived artifacts."""

import csv

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["read_csv_columns", "plot_curves"]


def read_csv_columns(path):
    with open(path) as f:
        rows = list(csv.reader(f))
    header = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return {name: data[:, i] for i, name in enumerate(header)}


def plot_curves(svg_path, curves, xlabel="", ylabel="", title="",
                xscale="linear", yscale="linear", figsize=(6.4, 4.4)):
    """curves: list of dicts with keys file, x, y and optional label, style,
    alpha, marker; data comes from the named CSV columns."""
    fig, ax = plt.subplots(figsize=figsize)
    for c in curves:
        cols = read_csv_columns(c["file"])
        ax.plot(cols[c["x"]], cols[c["y"]], c.get("style", "-"),
                label=c.get("label"), alpha=c.get("alpha", 1.0),
                marker=c.get("marker", None), ms=c.get("ms", 5))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.set_xscale(xscale)
    ax.set_yscale(yscale)
    if any(c.get("label") for c in curves):
        ax.legend(fontsize="small")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)
    return svg_path
