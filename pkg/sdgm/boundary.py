# sdgm/boundary.py
import csv
import logging
from dataclasses import dataclass
from io import StringIO
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .data import Standardizer, standardize_inputs, unstandardize
from .errors import InvalidDimensionError, InvalidInputError
from .model import SdgmModel, component_means, posterior_batch, relevance_samples

logger = logging.getLogger(__name__)

Bounds = Tuple[float, float, float, float]
Segment = Tuple[Tuple[float, float], Tuple[float, float]]

# fill colours per class for posterior shading and markers (RGB 0..1)
CLASS_COLOURS = [(0.16, 0.44, 0.71), (0.84, 0.37, 0.0), (0.17, 0.63, 0.17),
                 (0.58, 0.4, 0.74), (0.55, 0.34, 0.29), (0.89, 0.47, 0.76)]


@dataclass(frozen=True, eq=False)
class BoundaryGrid:
    bounds: Bounds
    resolution: int
    x1: np.ndarray
    x2: np.ndarray
    posteriors: np.ndarray   # resolution x resolution x C, indexed [i1, i2, c]

    def rows(self):
        for a, u in enumerate(self.x1):
            for b, v in enumerate(self.x2):
                yield u, v, self.posteriors[a, b]


def parse_bounds(text: str) -> Bounds:
    try:
        vals = tuple(float(p) for p in text.split(','))
    except ValueError:
        raise InvalidInputError(f'bounds must be x1min,x1max,x2min,x2max, got {text!r}')
    if len(vals) != 4 or not (vals[0] < vals[1] and vals[2] < vals[3]):
        raise InvalidInputError(f'bounds must be x1min,x1max,x2min,x2max with min < max, got {text!r}')
    return vals  # type: ignore[return-value]


def compute_grid(model: SdgmModel, bounds: Bounds, resolution: int,
                 standardizer: Optional[Standardizer] = None) -> BoundaryGrid:
    """P(c|x) on a resolution x resolution lattice over raw input coordinates."""
    if model.input_dim != 2:
        raise InvalidDimensionError(f'boundary export needs a 2-D model, this one has D={model.input_dim}')
    if resolution < 2:
        raise InvalidInputError('grid resolution must be >= 2')
    x1 = np.linspace(bounds[0], bounds[1], resolution)
    x2 = np.linspace(bounds[2], bounds[3], resolution)
    G1, G2 = np.meshgrid(x1, x2, indexing='ij')
    pts = np.column_stack([G1.ravel(), G2.ravel()])
    if standardizer is not None:
        pts = standardize_inputs(standardizer, pts)
    cls, _ = posterior_batch(model, pts)
    return BoundaryGrid(bounds, resolution, x1, x2, cls.reshape(resolution, resolution, -1))


def grid_csv(grid: BoundaryGrid, class_names: Optional[Sequence[str]] = None) -> str:
    C = grid.posteriors.shape[2]
    names = list(class_names) if class_names is not None else [str(c) for c in range(C)]
    buf = StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(['x1', 'x2'] + [f'p_{n}' for n in names])
    for u, v, p in grid.rows():
        writer.writerow([repr(float(u)), repr(float(v))] + [repr(float(q)) for q in p])
    return buf.getvalue()


def write_grid_csv(grid: BoundaryGrid, path: Union[str, Path], class_names: Optional[Sequence[str]] = None) -> None:
    Path(path).write_text(grid_csv(grid, class_names), encoding='utf-8')


# ---------- iso-contour ----------
def iso_segments(x1: np.ndarray, x2: np.ndarray, values: np.ndarray, level: float = 0.5) -> List[Segment]:
    """Marching squares: line pieces where the lattice field crosses `level`."""
    segs: List[Segment] = []

    def cut(pa, pb, va, vb):
        t = (level - va) / (vb - va)
        return (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))

    for a in range(len(x1) - 1):
        for b in range(len(x2) - 1):
            corners = [((x1[a], x2[b]), values[a, b]), ((x1[a + 1], x2[b]), values[a + 1, b]),
                       ((x1[a + 1], x2[b + 1]), values[a + 1, b + 1]), ((x1[a], x2[b + 1]), values[a, b + 1])]
            pts = []
            for e in range(4):
                (pa, va), (pb, vb) = corners[e], corners[(e + 1) % 4]
                if (va < level) != (vb < level):
                    pts.append(cut(pa, pb, va, vb))
            # 2 crossings: one piece; 4 (saddle): pair neighbouring edges
            for k in range(0, len(pts) - 1, 2):
                segs.append((pts[k], pts[k + 1]))
    return segs


# ---------- SVG ----------
def render_svg(grid: BoundaryGrid, model: SdgmModel, path: Union[str, Path],
               standardizer: Optional[Standardizer] = None, size: float = 480.0) -> None:
    """Posterior shading, P = 0.5 contours and component relevance markers."""
    from reportlab.graphics import renderSVG
    from reportlab.graphics.shapes import Circle, Drawing, Line, Rect, String
    from reportlab.lib import colors

    x1min, x1max, x2min, x2max = grid.bounds
    M = 24.0
    W = H = size

    def to_px(u: float, v: float) -> Tuple[float, float]:
        return (M + (u - x1min) / (x1max - x1min) * (W - 2 * M),
                M + (v - x2min) / (x2max - x2min) * (H - 2 * M))

    d = Drawing(W, H)
    d.add(Rect(0, 0, W, H, fillColor=colors.white, strokeColor=None))

    # cell shading: blend class colours by posterior
    n = grid.resolution
    cw = (W - 2 * M) / (n - 1)
    ch = (H - 2 * M) / (n - 1)
    palette = np.array([CLASS_COLOURS[c % len(CLASS_COLOURS)] for c in range(grid.posteriors.shape[2])])
    for a in range(n):
        for b in range(n):
            rgb = 0.35 * (grid.posteriors[a, b] @ palette) + 0.65
            px, py = to_px(grid.x1[a], grid.x2[b])
            d.add(Rect(px - cw / 2, py - ch / 2, cw, ch, strokeColor=None,
                       fillColor=colors.Color(*np.clip(rgb, 0, 1))))

    for c in range(grid.posteriors.shape[2]):
        for (p, q) in iso_segments(grid.x1, grid.x2, grid.posteriors[:, :, c]):
            (ax, ay), (bx, by) = to_px(*p), to_px(*q)
            d.add(Line(ax, ay, bx, by, strokeColor=colors.black, strokeWidth=1.2))

    markers = relevance_samples(model) if model.form == 'dual' else {}
    if not markers:
        markers = {cid: mu[None, :] for cid, mu in component_means(model).items()}
    for (c, _), pts in markers.items():
        if standardizer is not None and len(pts):
            pts = unstandardize(standardizer, pts)
        for u, v in pts:
            if not (x1min <= u <= x1max and x2min <= v <= x2max):
                continue
            px, py = to_px(u, v)
            d.add(Circle(px, py, 3.5, strokeColor=colors.black, strokeWidth=0.8,
                         fillColor=colors.Color(*CLASS_COLOURS[c % len(CLASS_COLOURS)])))

    d.add(Rect(M, M, W - 2 * M, H - 2 * M, fillColor=None, strokeColor=colors.black, strokeWidth=0.6))
    d.add(String(M, H - M + 8, f'P(c|x) = 0.5 contours, {model.form} form', fontName='Helvetica', fontSize=9))
    renderSVG.drawToFile(d, str(path))
    logger.info('boundary SVG written to %s', path)
