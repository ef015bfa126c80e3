"""Optional figures written next to the CSV reports.

matplotlib is imported lazily with the non-interactive Agg backend so the rest
of the package never depends on a display.
"""

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=120, metadata={"Software": None})
    fig.clf()


def plot_density(path, oracle, samples=None, estimates=None):
    """Invariant density, optionally over a histogram of states and estimate curves."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    xs, mu = oracle.table().T
    if samples is not None:
        ax.hist(np.ravel(samples), bins=80, density=True, color="0.8", label="states")
    ax.plot(xs, mu, "k-", lw=1.5, label="mu")
    for label, (ex, ey) in (estimates or {}).items():
        ax.plot(ex, ey, lw=1, label=label)
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.legend(frameon=False)
    _save(fig, path)
    plt.close(fig)


def plot_variance(path, rows):
    """Variance ratios with jackknife error bars, one marker per statistic."""
    plt = _pyplot()
    rows = [r for r in rows if not str(r[3]).startswith("cover_")]
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [f"{r[3]} n={r[0]}" for r in rows]
    ratio = np.array([r[7] for r in rows], dtype=float)
    err = 2 * np.array([r[8] for r in rows], dtype=float)
    ax.errorbar(np.arange(len(rows)), ratio, yerr=err, fmt="o", color="k")
    ax.axhline(1.0, color="0.5", lw=1)
    ax.set_xticks(np.arange(len(rows)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel("sample / limit variance")
    _save(fig, path)
    plt.close(fig)


def plot_rates(path, report):
    """Empirical deviation rates against depth with the limiting rate as a line."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    groups = {}
    for r in report.rows:
        groups.setdefault((r.region, r.x, r.delta), []).append(r)
    for (region, x, delta), rows in sorted(groups.items()):
        rows = sorted(rows, key=lambda r: r.n)
        line, = ax.plot([r.n for r in rows], [r.rate_hat for r in rows], "o-",
                        label=f"{region} x={x:g} delta={delta:g}")
        ax.axhline(rows[0].rate_theory, color=line.get_color(), ls="--", lw=1)
    ax.set_xlabel("n")
    ax.set_ylabel("rate")
    ax.legend(frameon=False)
    _save(fig, path)
    plt.close(fig)


def plot_correlations(path, vec):
    """Scatter matrix of the generation-lag coordinates."""
    plt = _pyplot()
    k = vec.shape[1]
    fig, axes = plt.subplots(k, k, figsize=(2 * k, 2 * k), squeeze=False)
    for i in range(k):
        for j in range(k):
            ax = axes[i, j]
            if i == j:
                ax.hist(vec[:, i], bins=40, color="0.6")
            else:
                ax.plot(vec[:, j], vec[:, i], ",", color="k")
            ax.set_xticks([])
            ax.set_yticks([])
    _save(fig, path)
    plt.close(fig)
