"""Two-panel evolution figure: density snapshots over x, Lorenz curves over f."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import MissingInput  # noqa: E402
from .io import read_trajectory_csv  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.linewidth": 0.6,
    "lines.linewidth": 1.0,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "lorenzflow",
    "svg.fonttype": "none",
}


def _colors(k):
    return plt.get_cmap("viridis")(np.linspace(0.0, 0.9, max(k, 1)))


def evolution_figure(density=None, lorenz=None, title: str | None = None):
    """Figure with density snapshots on top and Lorenz snapshots below.

    Either argument may be None; each is a dict as returned by
    :func:`lorenzflow.io.read_trajectory_csv`.
    """
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(5.0, 6.0))
        if density is not None:
            x = density["grid"].nodes
            for c, t, v in zip(_colors(len(density["times"])), density["times"], density["values"]):
                ax0.plot(x, v, color=c, label=f"t={t:.3g}")
        ax0.set_xlabel("x")
        ax0.set_ylabel(r"$\rho(x,t)$")
        if lorenz is not None:
            f = np.concatenate(([0.0], lorenz["grid"].nodes, [1.0]))
            for c, vals, top in zip(_colors(len(lorenz["times"])), lorenz["values"], lorenz["top"]):
                ax1.plot(f, np.concatenate(([0.0], vals, [top])), color=c)
        ax1.set_xlabel("f")
        ax1.set_ylabel(r"$\mathcal{L}(f,t)$")
        if density is not None and len(density["times"]) <= 8:
            ax0.legend(frameon=False, fontsize=7)
        if title:
            ax0.set_title(title)
        fig.tight_layout()
    return fig


def save_figure(fig, path) -> Path:
    path = Path(path)
    fmt = path.suffix.lstrip(".") or "svg"
    meta = {"Date": None} if fmt == "svg" else {"CreationDate": None} if fmt == "pdf" else None
    with plt.rc_context(STYLE):
        fig.savefig(path, format=fmt, metadata=meta)
    plt.close(fig)
    return path


def plot_run(run_dir, fmt: str = "svg") -> list[Path]:
    """Render one figure per experiment tag found in ``run_dir``.

    Density files ``density-<tag>.csv`` are paired with ``lorenz-<tag>.csv``.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise MissingInput(f"{run_dir} is not a directory")
    files = sorted(run_dir.glob("density-*.csv")) + sorted(run_dir.glob("lorenz-*.csv"))
    if not files:
        raise MissingInput(f"no trajectory CSVs in {run_dir}")
    tags = sorted({p.stem.split("-", 1)[1] for p in files})
    out = []
    for tag in tags:
        d = run_dir / f"density-{tag}.csv"
        L = run_dir / f"lorenz-{tag}.csv"
        fig = evolution_figure(read_trajectory_csv(d) if d.exists() else None,
                               read_trajectory_csv(L) if L.exists() else None, title=tag)
        out.append(save_figure(fig, run_dir / f"evolution-{tag}.{fmt}"))
    return out
