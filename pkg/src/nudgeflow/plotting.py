"""Static figures and gnuplot-readable .dat files for run and sweep directories.

Everything is derived from the files in the directory; nothing else is read.
"""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import read_series_csv, read_summary_csv  # noqa: E402


class MissingInputs(FileNotFoundError):
    pass


_PNG_META = {"Software": None}


def _write_dat(path: Path, header: str, rows) -> None:
    lines = [f"# {header}"]
    lines += [" ".join(repr(float(x)) for x in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def plot_run(run_dir) -> list[Path]:
    run_dir = Path(run_dir)
    src = run_dir / "series.csv"
    if not src.is_file():
        raise MissingInputs(f"{run_dir} has no series.csv")
    data = read_series_csv(src)
    if not len(data["t"]):
        raise MissingInputs(f"{src} has no samples")
    out = run_dir / "plots"
    out.mkdir(exist_ok=True)
    dat = out / "decay.dat"
    _write_dat(dat, "t l2_w h1_w l2_u h1_u", zip(*(data[k] for k in ("t", "l2_w", "h1_w", "l2_u", "h1_u"))))
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, label in (("h1_w", "||u - v||"), ("l2_w", "|u - v|")):
        y = data[key]
        pos = y > 0
        ax.semilogy(data["t"][pos], y[pos], label=label)
    ax.set_xlabel("t")
    ax.set_ylabel("error")
    ax.set_title("synchronization error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    png = out / "decay.png"
    fig.tight_layout()
    fig.savefig(png, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return [png, dat]


def plot_sweep(sweep_dir) -> list[Path]:
    sweep_dir = Path(sweep_dir)
    src = sweep_dir / "summary.csv"
    if not src.is_file():
        raise MissingInputs(f"{sweep_dir} has no summary.csv")
    rows = [r for r in read_summary_csv(src) if r["status"] == "ok" and r["fitted_rate"]]
    if not rows:
        raise MissingInputs(f"{src} has no completed cells with a fitted rate")
    by_h: dict = defaultdict(lambda: defaultdict(list))
    for r in rows:
        by_h[float(r["h"])][r["kind"]].append((float(r["mu"]), float(r["fitted_rate"])))
    out = sweep_dir / "plots"
    out.mkdir(exist_ok=True)
    written = []
    for h in sorted(by_h):
        tag = f"{h:g}"
        dat = out / f"rate_vs_mu_h{tag}.dat"
        pts = sorted((mu, rate, k) for k, lst in by_h[h].items() for mu, rate in lst)
        lines = ["# kind mu fitted_rate"] + [f"{k} {mu!r} {rate!r}" for mu, rate, k in pts]
        dat.write_text("\n".join(lines) + "\n")
        fig, ax = plt.subplots(figsize=(6, 4))
        for kind in sorted(by_h[h]):
            xy = sorted(by_h[h][kind])
            ax.plot([p[0] for p in xy], [p[1] for p in xy], "o-", label=kind)
        ax.set_xlabel("mu")
        ax.set_ylabel("fitted decay rate")
        ax.set_title(f"h = {tag}")
        if all(p[0] > 0 for p in pts) and max(p[0] for p in pts) > 10 * min(p[0] for p in pts):
            ax.set_xscale("log")
        ax.grid(True, alpha=0.3)
        ax.legend()
        png = out / f"rate_vs_mu_h{tag}.png"
        fig.tight_layout()
        fig.savefig(png, dpi=100, metadata=_PNG_META)
        plt.close(fig)
        written += [png, dat]
    return written


def plot_directory(path) -> list[Path]:
    """Dispatch on the directory contents; raises MissingInputs before
    writing anything when there is nothing to plot."""
    path = Path(path)
    if not path.is_dir():
        raise MissingInputs(f"{path} is not a directory")
    if (path / "summary.csv").is_file():
        return plot_sweep(path)
    if (path / "series.csv").is_file():
        return plot_run(path)
    raise MissingInputs(f"{path} holds neither series.csv nor summary.csv")
