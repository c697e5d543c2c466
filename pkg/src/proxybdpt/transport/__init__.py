"""Path-space core: sub-path tracing, connections, MIS, PT and BDPT."""

from .imageio import read_pfm, write_pfm, write_png
from .mis import FullPaths, balance_mis_weight_pdfs, balance_weights, strategy_pdfs, vertex_pdfs
from .paths import PathBatch, trace_eye_batch, trace_light_batch
from .render import RenderResult, render_bdpt, render_pt
from .subpath import (
    FullPath,
    PathVertex,
    SubPath,
    balance_mis_weight,
    connection_contribution,
    geometry_term,
    strategy_pdf,
    subpath_from_batch,
    trace_eye_subpath,
    trace_light_subpath,
)

__all__ = [
    "FullPath", "FullPaths", "PathBatch", "PathVertex", "RenderResult", "SubPath",
    "balance_mis_weight", "balance_mis_weight_pdfs", "balance_weights", "connection_contribution",
    "geometry_term", "read_pfm", "render_bdpt", "render_pt", "strategy_pdf", "strategy_pdfs", "subpath_from_batch",
    "trace_eye_batch", "trace_eye_subpath", "trace_light_batch", "trace_light_subpath",
    "vertex_pdfs", "write_pfm", "write_png",
]
