"""Report module.

Renders summary.md, with ASCII sparklines of the lower-bound function and its
generator residual, and a PNG plot of both.
"""

import logging
from typing import Any, Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ergodic_inventory.artifacts import (  # noqa: E402
    PLOT_FILE,
    SUMMARY_FILE,
    ArtifactStore,
)
from ergodic_inventory.costs import HoldingCost  # noqa: E402
from ergodic_inventory.kernel import DemandModel  # noqa: E402
from ergodic_inventory.verifier import ValueFunction  # noqa: E402

logger = logging.getLogger(__name__)

SPARK_LEVELS = " .:-=+*#%@"
SPARK_WIDTH = 64
PLOT_POINTS = 801


def sparkline(values: Any, width: int = SPARK_WIDTH) -> str:
    """Render values as a one-line ASCII sparkline.

    Args:
        values: Sequence of numbers, resampled to ``width`` characters
        width: Number of characters

    Returns:
        The sparkline; a flat series renders at the middle level
    """
    data = np.asarray(values, dtype=float)
    data = data[np.isfinite(data)]
    if data.size == 0:
        return ""
    idx = np.linspace(0, data.size - 1, min(width, data.size)).round().astype(int)
    data = data[idx]
    lo, hi = float(np.min(data)), float(np.max(data))
    top = len(SPARK_LEVELS) - 1
    if hi - lo <= 0:
        return SPARK_LEVELS[top // 2] * data.size
    levels = np.round((data - lo) / (hi - lo) * top).astype(int)
    return "".join(SPARK_LEVELS[i] for i in levels)


def _plot(
    store: ArtifactStore,
    zs: np.ndarray,
    values: np.ndarray,
    residual: np.ndarray,
    underline_s: float,
    s_star: float,
    S_star: float,
) -> str:
    fig, axes = plt.subplots(1, 2, figsize=(12, 4.5))
    axes[0].plot(zs, values, lw=1.2, color="royalblue")
    axes[0].set_title("Lower-bound function V")
    axes[1].plot(zs, residual, lw=1.0, color="darkorange")
    axes[1].axhline(0, color="black", lw=0.7)
    axes[1].set_title("Generator residual AV + h - alpha*")
    for ax in axes:
        ax.axvline(underline_s, color="grey", linestyle=":", label="s_")
        ax.axvline(s_star, color="green", linestyle="--", label="s*")
        ax.axvline(S_star, color="red", linestyle="--", label="S*")
        ax.set_xlabel("inventory level z")
        ax.legend()
    target = store.path(PLOT_FILE)
    fig.savefig(target, dpi=120, bbox_inches="tight")
    plt.close(fig)
    logger.debug(f"Wrote plot {target}")
    return target


def _table(rows: List[tuple]) -> List[str]:
    lines = ["| quantity | value |", "| --- | --- |"]
    lines.extend(f"| {name} | {value} |" for name, value in rows)
    return lines


def write_report(
    store: ArtifactStore,
    model: DemandModel,
    h: HoldingCost,
    optimum: Dict[str, Any],
    certificate: Dict[str, Any],
    simulation: Optional[Dict[str, Any]] = None,
) -> str:
    """Write summary.md and the plot file.

    Args:
        store: Artifact store of the study
        model: Demand model
        h: Holding cost
        optimum: Stored optimum
        certificate: Stored certificate
        simulation: Stored simulation summary, if any

    Returns:
        Path of summary.md
    """
    s_star, S_star = float(optimum["s_star"]), float(optimum["S_star"])
    alpha_star = float(optimum["alpha_star"])
    underline_s = float(certificate["underline_s"])
    span = S_star - s_star
    zs = np.linspace(underline_s - span, S_star + 2.0 * span, PLOT_POINTS)
    V = ValueFunction(model, h, alpha_star, underline_s)
    values = V.value(zs)
    residual = V.generator_residual(zs)
    plot = _plot(store, zs, values, residual, underline_s, s_star, S_star)

    lines = [
        "# Inventory control study",
        "",
        f"Model: `{model.label}`",
        "",
        "## Optimal policy",
        "",
        *_table(
            [
                ("s*", f"{s_star:.9g}"),
                ("S*", f"{S_star:.9g}"),
                ("alpha*", f"{alpha_star:.12g}"),
                ("B1", f"{optimum['bracket']['B1']:.6g}"),
                ("B2", f"{optimum['bracket']['B2']:.6g}"),
            ]
        ),
        "",
        "## Certificate",
        "",
        *_table(
            [
                ("pass", "yes" if certificate.get("pass") else "no"),
                ("s_", f"{underline_s:.9g}"),
                ("z_bar", certificate.get("z_bar")),
                ("min residual", f"{certificate['hjb_min_residual']:.3e}"),
                (
                    "max residual above s_",
                    f"{certificate['hjb_max_abs_residual_above']:.3e}",
                ),
                (
                    "min intervention slack",
                    f"{certificate['intervention_min_slack']:.3e}",
                ),
                ("tolerance", f"{certificate['tolerance']:.1e}"),
            ]
        ),
        "",
        f"V on [{zs[0]:.4g}, {zs[-1]:.4g}]:",
        "",
        "```",
        sparkline(values),
        "```",
        "",
        "Residual AV + h - alpha*:",
        "",
        "```",
        sparkline(residual),
        "```",
        "",
    ]
    if simulation is not None:
        lines.extend(
            [
                "## Simulation",
                "",
                *_table(
                    [(k, simulation[k]) for k in sorted(simulation) if k != "base"]
                ),
                "",
            ]
        )
    lines.append(f"Plot: `{PLOT_FILE}`")
    lines.append("")
    target = store.write_text(SUMMARY_FILE, "\n".join(lines))
    logger.info(f"Wrote report {target} and plot {plot}")
    return target
