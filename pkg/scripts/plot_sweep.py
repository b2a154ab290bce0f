"""Plot E and cwOnAveKL against the noise level from a sweep CSV.

Usage: python scripts/plot_sweep.py sweep.csv out.png

Needs matplotlib, which is not a package dependency.
"""
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from privlasso.artifacts import read_records  # noqa: E402


def main(src, dst):
    series = defaultdict(list)
    for r in read_records(src):
        if r.status == "converged" and r.E_generalization is not None:
            series[r.engine, r.scheme, r.lam].append(r)
    fig, (ax_e, ax_kl) = plt.subplots(1, 2, figsize=(10, 4))
    for (engine, scheme, lam), rows in sorted(series.items()):
        rows.sort(key=lambda r: r.sigma_eta_bar)
        label = f"{engine} {scheme} lambda={lam:g}"
        style = "o" if engine == "amp" else "-"
        ax_e.plot([r.sigma_eta_bar for r in rows], [r.E_generalization for r in rows], style, label=label, ms=3)
        kl = [(r.sigma_eta_bar, r.cw_onave_kl) for r in rows if r.cw_onave_kl is not None]
        if kl:
            ax_kl.plot(*zip(*kl), style, label=label)
    for ax, name in ((ax_e, "E"), (ax_kl, "cwOnAveKL")):
        ax.set_xscale("log")
        ax.set_xlabel("sigma_eta_bar")
        ax.set_ylabel(name)
    ax_kl.set_yscale("log")
    ax_e.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(dst, dpi=120)


if __name__ == "__main__":
    main(*sys.argv[1:3])
