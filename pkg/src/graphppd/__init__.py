"""Amortized posterior predictive distributions for graph-level learning."""
from .distributions import Categorical, Gaussian, mixture
from .encoder import EncoderConfig, encode, encode_batch
from .graphdata import Dataset, Graph, Split, Task, load_jsonl, save_jsonl
from .models import Ensemble, GraphPPDModel, PlainModel
from .ppdhead import ContextSet, PPDConfig, cross_attention, ppd_classify, ppd_regress

__version__ = "0.1.0"

__all__ = [
    "Categorical", "ContextSet", "Dataset", "EncoderConfig", "Ensemble", "Gaussian", "Graph",
    "GraphPPDModel", "PPDConfig", "PlainModel", "Split", "Task", "cross_attention", "encode",
    "encode_batch", "load_jsonl", "mixture", "ppd_classify", "ppd_regress", "save_jsonl",
]
