"""Figure rendering for experiment reports (headless matplotlib)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["plot_trajectory", "plot_cdf", "plot_map"]


def _draw_environment(ax, cfg) -> None:
    ax.plot(*np.asarray(cfg.anchor), "k^", markersize=9, label="anchor")
    span = cfg.fov * 1.2
    for point, normal in cfg.reflectors:
        p = np.asarray(point, dtype=float)
        d = np.array([-normal[1], normal[0]], dtype=float)
        seg = np.stack([p - span * d, p + span * d])
        ax.plot(seg[:, 0], seg[:, 1], color="0.4", lw=2.5)
    for sc in cfg.scatterers:
        ax.plot(sc[0], sc[1], "ks", markersize=7, fillstyle="none", label="scatterer")


def plot_trajectory(cfg, result, path) -> None:
    """True path against SLAM and EKF estimates for one run."""
    slam = np.asarray(result.estimates_slam)
    ekf = np.asarray(result.estimates_ekf)
    fig, ax = plt.subplots(figsize=(7, 6))
    _draw_environment(ax, cfg)
    ax.plot(slam[:, 6], slam[:, 7], "k-", lw=1.5, label="truth")
    ax.plot(slam[:, 1], slam[:, 2], "C0--", lw=1.2, label="SLAM")
    ax.plot(ekf[:, 1], ekf[:, 2], "C3:", lw=1.2, label="EKF (LOS only)")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"{cfg.name}: trajectory {result.traj}, rep {result.rep}")
    ax.axis("equal")
    ax.grid(alpha=0.3)
    _dedupe_legend(ax)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_cdf(slam_cdf, ekf_cdf, path) -> None:
    """Empirical CDFs of position error, both methods."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for cdf, label, style in ((slam_cdf, "SLAM", "C0-"), (ekf_cdf, "EKF (LOS only)", "C3--")):
        arr = np.asarray(cdf)
        if arr.size:
            ax.step(arr[:, 0], arr[:, 1], style, where="post", label=label)
    ax.set_xlabel("position error [m]")
    ax.set_ylabel("fraction of steps")
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_map(cfg, truth_vts, result, path) -> None:
    """Estimated virtual transmitters against the ground-truth set."""
    fig, ax = plt.subplots(figsize=(7, 6))
    _draw_environment(ax, cfg)
    for vt in truth_vts:
        ax.plot(vt.position[0], vt.position[1], "kx", markersize=10, mew=2, label="true VT")
        ax.annotate(
            f"b={vt.bias:.1f}",
            vt.position,
            textcoords="offset points",
            xytext=(6, 6),
            fontsize=8,
            color="0.2",
        )
    for d in result.slam_map:
        ax.plot(d["x"], d["y"], "C0o", markersize=6, fillstyle="none", label="estimated VT")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"{cfg.name}: final map (trajectory {result.traj}, rep {result.rep})")
    ax.axis("equal")
    ax.grid(alpha=0.3)
    _dedupe_legend(ax)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _dedupe_legend(ax) -> None:
    handles, labels = ax.get_legend_handles_labels()
    seen: dict[str, object] = {}
    for h, l in zip(handles, labels):
        seen.setdefault(l, h)
    ax.legend(seen.values(), seen.keys(), loc="best", fontsize=9)
