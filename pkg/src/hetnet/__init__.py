"""Heterogeneous mirror detection network: low-level contrast heads, high-level
semantic heads, cross-aggregation fusion and multi-scale supervision."""

from .assembly import Network, NetworkConfig, build_network, forward, variant_config
from .errors import ConfigurationError, InputError
from .losses import ppa_loss, total_loss
from .metrics import MetricReport, evaluate_dataset, f_beta, iou, mae

__version__ = "0.1.0"
