"""Figure rendering for scalar maps (matplotlib, non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def map_summary(name, data, mask=None):
    """Row ``(name, min, max, mean, valid voxels)`` over the masked voxels."""
    data = np.asarray(data, dtype=float)
    sel = data[mask.astype(bool)] if mask is not None else data.ravel()
    if sel.size == 0:
        return (name, float("nan"), float("nan"), float("nan"), 0)
    return (name, float(sel.min()), float(sel.max()), float(sel.mean()), int(sel.size))


def format_summary(rows):
    lines = ["map\tmin\tmax\tmean\tvalid"]
    for name, lo, hi, mean, n in rows:
        lines.append(f"{name}\t{lo:.6g}\t{hi:.6g}\t{mean:.6g}\t{n}")
    return "\n".join(lines)


def render_maps(path, maps, slice_axis=2, index=None, cmap="viridis"):
    """Save the middle slice (or ``index``) of each named map side by side.

    ``maps`` is an ordered mapping of name to (X, Y, Z) arrays.
    """
    names = list(maps)
    if not names:
        raise ValueError("no maps to render")
    fig, axes = plt.subplots(1, len(names), figsize=(3.2 * len(names), 3.2), squeeze=False)
    for ax, name in zip(axes[0], names):
        vol = np.asarray(maps[name], dtype=float)
        k = vol.shape[slice_axis] // 2 if index is None else index
        img = np.take(vol, k, axis=slice_axis)
        im = ax.imshow(img.T, origin="lower", cmap=cmap, interpolation="nearest")
        ax.set_title(name)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
