"""Detection-time figure for batch runs: module size vs analysis time."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def plot_timing(rows, out_path):
    """Scatter per-contract detection time against module size and overlay
    a least-squares linear fit.  rows: [(file, bytes, milliseconds), ...]."""
    sizes = [r[1] / 1024.0 for r in rows]
    times = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(sizes, times, s=18, alpha=0.7, label="contracts")
    if len(rows) >= 2:
        n = len(sizes)
        mean_x = sum(sizes) / n
        mean_y = sum(times) / n
        sxx = sum((x - mean_x) ** 2 for x in sizes)
        if sxx > 0:
            slope = sum((x - mean_x) * (y - mean_y)
                        for x, y in zip(sizes, times)) / sxx
            intercept = mean_y - slope * mean_x
            xs = [min(sizes), max(sizes)]
            ax.plot(xs, [slope * x + intercept for x in xs], "r--",
                    label=f"fit: {slope:.3f} ms/KiB")
    ax.set_xlabel("module size (KiB)")
    ax.set_ylabel("detection time (ms)")
    ax.set_title("Detection time vs contract size")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
