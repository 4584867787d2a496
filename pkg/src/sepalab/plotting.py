"""Optional figures for command-line reports (written only with ``--figures``)."""

from __future__ import annotations

import os
from collections import defaultdict

__all__ = ["render"]


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _series(results: list[dict], key: str, label_keys: tuple[str, ...]) -> dict[str, list[tuple[int, float]]]:
    out: dict[str, list[tuple[int, float]]] = defaultdict(list)
    for r in results:
        v = r.get(key)
        if v is None:
            continue
        label = " ".join(str(r[k]) for k in label_keys if r.get(k))
        out[label].append((r["N"], float(v)))
    return {k: sorted(v) for k, v in out.items()}


def _line_plot(path: str, series: dict, title: str, ylabel: str, logx: bool = True, logy: bool = False) -> str | None:
    if not series:
        return None
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, pts in sorted(series.items()):
        xs, ys = zip(*pts)
        ax.plot(xs, ys, marker="o", label=label)
    if logx:
        ax.set_xscale("log", base=2)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("N")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def render(report: dict, directory: str) -> list[str]:
    """Write PNG figures for ``report`` into ``directory``; return their paths."""
    os.makedirs(directory, exist_ok=True)
    cfg = report["config"]
    sub, target = cfg["subcommand"], cfg.get("target") or "all"
    results = report["results"]
    paths: list[str | None] = []
    stem = os.path.join(directory, f"{sub}-{target}")
    if sub == "verify":
        keys = ("construction", "variant")
        paths.append(_line_plot(f"{stem}-width.png", _series(results, "width", keys), "Measured width", "max(m, d)"))
        paths.append(
            _line_plot(
                f"{stem}-margin.png",
                _series(results, "min_target_weight_float", keys),
                "Smallest attention weight on the target",
                "weight",
            )
        )
        acc = [{**r, "accuracy": 1 - r["mismatches"] / r["cases"]} for r in results if r["cases"]]
        paths.append(_line_plot(f"{stem}-accuracy.png", _series(acc, "accuracy", keys), "Agreement with the oracle", "fraction"))
    elif sub == "protocol":
        series = _series(results, "max_bits", ("protocol",))
        series.update({f"{k} bound": v for k, v in _series(results, "bound", ("protocol",)).items()})
        paths.append(_line_plot(f"{stem}-bits.png", series, "Transcript bits", "bits", logy=True))
    elif sub == "bounds":
        floors = {
            "index lookup floor N/p": "index_lookup_m",
            "equality floor N/2p": "equality_m",
            "nearest neighbor floor N/2p": "nearest_neighbor_m",
            "dyck one-layer floor": "dyck_one_layer_m",
        }
        series = {label: sorted((r["N"], float(r[key])) for r in results) for label, key in floors.items()}
        widths: dict[str, list] = defaultdict(list)
        for r in results:
            for name, w in (r.get("widths") or {}).items():
                widths[f"{name} width"].append((r["N"], float(w)))
        series.update({k: sorted(v) for k, v in widths.items()})
        paths.append(_line_plot(f"{stem}-floors.png", series, "Recurrent floors and measured widths", "width", logy=True))
    return [p for p in paths if p]
