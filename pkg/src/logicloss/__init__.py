"""First-order consistency rules compiled into t-norm generator losses."""

from .autodiff import Expr, compile_graph, eval_forward, eval_gradient, finite_diff_check
from .compiler import (
    SampleOutputs, PairBinding, compile_formula, pair_consistency_loss, pair_loss_value,
    supervised_loss, total_loss, truth_degree,
)
from .fol import parse_formula, parse_kb, render
from .kb import EntailmentKB, builtin_kb, load_kb
from .tnorms import GODEL, LUKASIEWICZ, PRODUCT, Generator, Semantics, eval_connective, frank, schweizer_sklar

__version__ = "0.1.0"
