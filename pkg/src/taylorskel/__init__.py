"""Taylor-series skeleton encoding and two skeleton action classifiers.

Modules: ``skeleton_data`` (NTU parsing, JSON sequences, synthetic data),
``taylor`` (the block-wise Taylor transform), ``topology`` (skeletal graph and
body-part hypergraph), ``numerics`` (a small reverse-mode autodiff engine),
``models`` (ST-GCN and a hypergraph-attention transformer), ``training``,
``evaluation``, ``render`` (SVG figures) and ``cli``.
"""

from .skeleton_data import SkeletonSequence, DatasetManifest, PreprocessConfig
from .taylor import TaylorConfig, taylor_transform, motion_magnitude
from .topology import build_ntu_graph, build_bodypart_hypergraph
from .evaluation import evaluate, delta_table, filter_confusion, EvalReport

__version__ = "0.1.0"
