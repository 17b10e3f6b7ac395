"""Optional SVG charts; needs the ``plot`` extra (matplotlib)."""
from __future__ import annotations

from pathlib import Path


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("--svg needs matplotlib; install the 'plot' extra") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed metadata keeps repeated renders byte-identical
    matplotlib.rcParams["svg.hashsalt"] = "qcsma"
    return plt


def _save(fig, path: Path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_sweep(metrics, path, xlabel: str = "traffic intensity"):
    """Average queue per link against the swept parameter, one line per algorithm."""
    plt = _pyplot()
    series: dict[str, list[tuple[float, float]]] = {}
    for m in metrics:
        series.setdefault(m.algorithm, []).append((m.point, m.avg_queue))
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, pts in series.items():
        pts.sort()
        ax.plot([p for p, _ in pts], [v for _, v in pts], marker="o", label=name)
    ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("average queue length per link")
    ax.legend()
    fig.tight_layout()
    _save(fig, Path(path))
    plt.close(fig)


def plot_sample_paths(metrics, path):
    """Run-averaged mean queue per link against time."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for m in metrics:
        label = m.algorithm if len({x.point for x in metrics}) == 1 else f"{m.algorithm} @ {m.point:g}"
        ax.plot(m.mean_trace.t, m.mean_trace.mean_queue, label=label)
    ax.set_xlabel("time slot")
    ax.set_ylabel("average queue length per link")
    ax.legend()
    fig.tight_layout()
    _save(fig, Path(path))
    plt.close(fig)
