"""Streaming transformer-encoder inference engine.

One token in, one attended token out, at linear per-step cost: every layer
keeps a rolling memory of the most recent key/value rows instead of
recomputing the whole attention window. Full-recompute oracles, a
difference analyzer, file formats and a benchmark harness live alongside
the engine so the equivalences it claims are checked, not assumed.
"""

from .attention import KVMemory, base_attention, continual_so_step, m_output_step
from .config import ConfigError, FeedForward, Mode, ModelConfig, Norm
from .diffanalysis import (DeltaReport, PropagationFactors, additive_split_check,
                           measure_deltas, propagation_factors,
                           verify_linear_propagation)
from .encoder import LayerWeights, combined_ff, layer_forward_window, layer_step_continual
from .model import (Model, StreamState, effective_receptive_field, forward,
                    new_state, oracle_bidirectional, oracle_causal_banded,
                    random_model, stream_forward, stream_step, window_forward)
from .numerics import Activation, matmul, pairwise_sq_euclid, row_softmax, soft_activation
from .persistence import (ChecksumError, FormatError, PersistenceError,
                          convert_config, load_model, load_stream, save_model,
                          save_report, save_stream)
from .positional import recycling_embed, rope_rotate, rope_rotate_rows

__version__ = "0.1.0"
