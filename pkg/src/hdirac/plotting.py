"""Report figures for the command-line driver (matplotlib, Agg backend)."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["line_figure", "semilog_figure", "spectrum_figure"]


def _save(fig, directory, name):
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, name)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def line_figure(directory, name, x, series, xlabel="x", ylabel="", title=""):
    """One line per entry of ``series`` (label -> values) against ``x``; returns the file path."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, y in series.items():
        ax.plot(x, np.real(y), marker=".", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, directory, name)


def semilog_figure(directory, name, x, series, xlabel="", ylabel="", title=""):
    """Log-log plot of absolute values (convergence diagnostics)."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, y in series.items():
        ax.loglog(x, np.abs(y), marker="o", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, directory, name)


def spectrum_figure(directory, name, energies, title="spectrum of K"):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    E = np.sort(np.asarray(energies))
    ax.plot(np.arange(E.size), E, ".", ms=2)
    ax.set_xlabel("index")
    ax.set_ylabel("E")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, directory, name)
