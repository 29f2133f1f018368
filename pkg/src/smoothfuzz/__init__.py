"""Coverage-guided fuzzing with a neural surrogate of program branching."""

from .coverage import (ByteInput, EdgeBitmap, LabelReduction, build_reduction,
                       has_new_coverage, pad_input, reduce)
from .estimators import EdgeMerger
from .mutation import MutationSchedule, generate_mutations, magic_solver, top_k
from .orchestrator import Campaign, CampaignConfig, Corpus, run_campaign
from .surrogate import CoverageSurrogate, NNModel, init_model, input_gradient, train
from .targets import ExternalTarget, execute, get_target

__version__ = "0.1.0"
