import pathlib
import typing
import structlog

from lowlight_structure.csv import read_loss_csv

logger = structlog.get_logger(__name__)

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError as e:
    plt = None
    logger.warn("matplotlib not found")

__all__ = ('plot_loss_curve', )

CURVES = ("appearance", "structure", "adversarial", "discriminator", "enhancement", "total")


def plot_loss_curve(csv_path: typing.Union[str, pathlib.Path], png_path: typing.Union[str, pathlib.Path]) -> bool:
    """Render every loss column against step; returns False when plotting is unavailable."""
    if plt is None:
        return False
    df = read_loss_csv(csv_path)
    figure, axis = plt.subplots(figsize=(8, 5))
    try:
        for column in CURVES:
            axis.plot(df["step"], df[column], label=column, linewidth=2.0 if column == "total" else 1.0)
        axis.set_xlabel("step")
        axis.set_ylabel("loss")
        if (df[list(CURVES)] > 0).all().all():
            axis.set_yscale("log")
        axis.legend(loc="upper right")
        axis.grid(alpha=0.3)
        figure.tight_layout()
        figure.savefig(png_path, dpi=100)
    finally:
        plt.close(figure)
    logger.info("plot.written", path=str(png_path), rows=len(df))
    return True
