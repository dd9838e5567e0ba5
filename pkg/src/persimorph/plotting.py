"""Report figures. Everything renders off-screen to files."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def figsize(width=5.0, ratio=GOLDEN):
    return (width, width * ratio)


def save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss_curve(history, path, title="contrastive training"):
    steps = [h["step"] for h in history]
    loss = [h["loss"] for h in history]
    tau = [h["tau"] for h in history]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize())
        ax.plot(steps, loss, lw=1, color="0.3", label="batch loss")
        if len(loss) >= 10:
            w = max(5, len(loss) // 20)
            smooth = np.convolve(loss, np.ones(w) / w, mode="valid")
            ax.plot(steps[w - 1:], smooth, lw=2, color="C0", label=f"mean of {w}")
        ax.set_xlabel("step")
        ax.set_ylabel("InfoNCE loss")
        ax.set_title(title)
        ax2 = ax.twinx()
        ax2.plot(steps, tau, lw=1, ls="--", color="C3")
        ax2.set_ylabel("temperature", color="C3")
        ax.legend(loc="upper right", frameon=False)
        return save(fig, path)


def plot_accuracy_bars(report, path):
    knn = report["knn"]
    ks = list(knn)
    names = ("tree", "image", "fused")
    x = np.arange(len(names))
    width = 0.8 / max(1, len(ks))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize())
        for j, k in enumerate(ks):
            vals = [knn[k][n] for n in names]
            bars = ax.bar(x + j * width, vals, width, label=f"k={k}")
            ax.bar_label(bars, fmt="%.1f", fontsize=7)
        ax.set_xticks(x + width * (len(ks) - 1) / 2, names)
        ax.set_ylim(0, 105)
        ax.set_ylabel("kNN accuracy (%)")
        ax.legend(frameon=False)
        return save(fig, path)


def plot_similarity(Zt, Zv, path):
    S = np.asarray(Zt) @ np.asarray(Zv).T
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        im = ax.imshow(S, cmap="RdBu_r", vmin=-1, vmax=1)
        ax.set_xlabel("image")
        ax.set_ylabel("tree")
        ax.set_title("cross-modal cosine similarity")
        fig.colorbar(im, ax=ax, shrink=0.8)
        return save(fig, path)


def plot_diagram(diagram, path):
    b = diagram.birth
    p = diagram.persistence
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 4))
        sc = ax.scatter(b, p, c=diagram.mean_radius, s=12 + 40 * diagram.delta / max(diagram.delta.max(), 1e-12),
                        cmap="viridis", edgecolor="k", linewidth=0.3)
        ax.set_xlabel("birth (um)")
        ax.set_ylabel("persistence (um)")
        ax.set_title(diagram.neuron_id or "persistence diagram")
        fig.colorbar(sc, ax=ax, shrink=0.8, label="mean radius (um)")
        return save(fig, path)


def plot_image_channels(img, path):
    chans = img.config.channels
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(chans), figsize=(3.0 * len(chans), 2.8), squeeze=False)
        for ax, name in zip(axes[0], chans):
            im = ax.imshow(img.channel(name), origin="lower", cmap="magma")
            ax.set_title(name)
            ax.set_xlabel("birth")
            ax.set_ylabel("persistence")
            fig.colorbar(im, ax=ax, shrink=0.75)
        return save(fig, path)


def plot_augment_preview(original, views, applied, path):
    from .pimage import to_rgb8

    n = 1 + len(views)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, n, figsize=(2.2 * n, 2.5), squeeze=False)
        axes[0, 0].imshow(to_rgb8(original))
        axes[0, 0].set_title("original")
        for ax, img, a in zip(axes[0, 1:], views, applied):
            ax.imshow(to_rgb8(img))
            ax.set_title(", ".join(f"{k}={a[k]:.3g}" for k in ("alpha", "beta") if k in a) or f"view {a['view']}",
                         fontsize=7)
        for ax in axes[0]:
            ax.set_xticks([])
            ax.set_yticks([])
        return save(fig, path)
