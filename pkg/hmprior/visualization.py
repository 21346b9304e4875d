import logging
from pathlib import Path

import numpy as np
import plotly.express as px
import plotly.graph_objects as go

from hmprior.density import kde2d_fit, kde_fit

logger = logging.getLogger(__name__)

PLAUSIBLE_COLOR = '#1e88e5'    # Blue
IMPLAUSIBLE_COLOR = '#e53935'  # Red
SURVIVOR_COLOR = '#43a047'     # Green


def create_pvalue_heatmap(grid_frame, box, column, alpha=0.05, overlay=None):
    """
    Create a heat map of one check's p-value over a 2-D grid map.

    Args:
        grid_frame (pd.DataFrame): Output of ``grid_pvalue_map`` (row-major, second axis fastest)
        box (HyperBox): The box the grid spans
        column (str): Check label or "I"
        alpha (float): Level of the contour line
        overlay (pd.DataFrame): Optional points to draw on top, with the box's coordinate columns

    Returns:
        fig: Plotly figure object
    """
    x_name, y_name = box.names
    xs = np.unique(grid_frame[x_name].to_numpy())
    ys = np.unique(grid_frame[y_name].to_numpy())
    z = grid_frame[column].to_numpy().reshape(len(xs), len(ys)).T

    fig = go.Figure()
    fig.add_trace(go.Heatmap(x=xs, y=ys, z=z, colorscale='Viridis', zmin=0, zmax=1 if column != "I" else None,
                             colorbar=dict(title=column)))
    if column != "I":
        fig.add_trace(go.Contour(x=xs, y=ys, z=z, showscale=False, hoverinfo='skip',
                                 contours=dict(start=alpha, end=alpha, size=1, coloring='lines'),
                                 line=dict(color='white', width=2), name=f"p = {alpha}"))
    if overlay is not None and len(overlay):
        fig.add_trace(go.Scatter(x=overlay[x_name], y=overlay[y_name], mode='markers',
                                 marker=dict(color=SURVIVOR_COLOR, size=6, line=dict(color='black', width=0.5)),
                                 name='survivors'))

    fig.update_layout(
        title=f"{column} over the hyperparameter grid",
        xaxis_title=x_name,
        yaxis_title=y_name,
        margin=dict(t=50, b=40, l=60, r=20)
    )
    if box.log_scale[0]:
        fig.update_xaxes(type='log')
    if box.log_scale[1]:
        fig.update_yaxes(type='log')
    return fig


def create_wave_scatter_matrix(wave_frame, names, title):
    """
    Create a pairwise scatter plot of one wave's points, coloured by implausibility.

    Returns:
        fig: Plotly figure object
    """
    fig = px.scatter_matrix(wave_frame, dimensions=list(names), color="I",
                            color_continuous_scale='Viridis', title=title)
    fig.update_traces(diagonal_visible=False, marker=dict(size=3))
    fig.update_layout(margin=dict(t=50, b=20, l=20, r=20))
    return fig


def create_predictive_histogram(samples, label, implausible=(), plausible=()):
    """
    Create a histogram of predictive draws with its kernel density and the hypothetical values marked.

    Plausible values are drawn in blue and implausible values in red.

    Returns:
        fig: Plotly figure object
    """
    samples = np.asarray(samples, dtype=float)
    samples = samples[np.isfinite(samples)]
    fig = go.Figure()
    fig.add_trace(go.Histogram(x=samples, histnorm='probability density', nbinsx=80,
                               marker_color='#b0bec5', name='draws'))
    kde = kde_fit(samples)
    if not kde.degenerate:
        lo, hi = samples.min(), samples.max()
        values = list(implausible) + list(plausible)
        if values:
            lo, hi = min(lo, min(values)), max(hi, max(values))
        xs = np.linspace(lo, hi, 400)
        fig.add_trace(go.Scatter(x=xs, y=kde.pdf(xs), mode='lines', line=dict(color='black'), name='KDE'))
    for h in implausible:
        fig.add_vline(x=h, line=dict(color=IMPLAUSIBLE_COLOR, width=2, dash='dash'))
    for h in plausible:
        fig.add_vline(x=h, line=dict(color=PLAUSIBLE_COLOR, width=2, dash='dash'))
    fig.update_layout(title=f"Prior predictive of {label}", xaxis_title=label, yaxis_title="density",
                      showlegend=False, margin=dict(t=50, b=40, l=60, r=20))
    return fig


def create_joint_contour(samples2d, point, labels, resolution=120):
    """
    Create a contour plot of the 2-D predictive density with the checked point marked.

    Returns:
        fig: Plotly figure object
    """
    kde = kde2d_fit(samples2d)
    sample = kde.sample
    lo = np.minimum(sample.min(axis=0), point)
    hi = np.maximum(sample.max(axis=0), point)
    pad = 0.05 * (hi - lo)
    xs = np.linspace(lo[0] - pad[0], hi[0] + pad[0], resolution)
    ys = np.linspace(lo[1] - pad[1], hi[1] + pad[1], resolution)
    X, Y = np.meshgrid(xs, ys)
    Z = kde.pdf(np.column_stack([X.ravel(), Y.ravel()])).reshape(X.shape)

    fig = go.Figure()
    fig.add_trace(go.Contour(x=xs, y=ys, z=Z, colorscale='Blues', ncontours=15,
                             colorbar=dict(title='density')))
    fig.add_trace(go.Scatter(x=[point[0]], y=[point[1]], mode='markers',
                             marker=dict(color=IMPLAUSIBLE_COLOR, size=10, symbol='x'), name='point'))
    fig.update_layout(title=f"Joint predictive of {labels[0]} and {labels[1]}",
                      xaxis_title=labels[0], yaxis_title=labels[1], showlegend=False,
                      margin=dict(t=50, b=40, l=60, r=20))
    return fig


def save_figure(fig, path):
    """
    Save a figure as a static image (format from the suffix, SVG by default).

    Plot export never fails a run: a missing image engine is logged and skipped.

    Returns:
        Path of the written image, or None
    """
    path = Path(path)
    if not path.suffix:
        path = path.with_suffix('.svg')
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.write_image(str(path))
    except (ValueError, RuntimeError, ImportError) as e:
        logger.warning("could not export %s: %s", path.name, e)
        return None
    return path
