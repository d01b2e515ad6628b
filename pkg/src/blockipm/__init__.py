"""Structure-exploiting interior-point solver for two-stage block-structured NLPs."""
from .model import BlockDims, BlockNlp, Iterate, KktResiduals, eval_lagrangian, kkt_error, total_dims

__version__ = "0.1.0"

__all__ = ["BlockDims", "BlockNlp", "Iterate", "KktResiduals", "eval_lagrangian", "kkt_error", "total_dims"]
