from .distill import (DistillMetaPrompt, assemble_batch, chunk, distill_meta_prompt,
                      render_batch, split_response)
from .ipl import Group, Grouping, IplConfig, ipl_assign, ipl_bootstrap, run_ipl
from .rates import reduction_rates

__all__ = [
    "DistillMetaPrompt", "Group", "Grouping", "IplConfig", "assemble_batch", "chunk",
    "distill_meta_prompt", "ipl_assign", "ipl_bootstrap", "reduction_rates", "render_batch",
    "run_ipl", "split_response",
]
