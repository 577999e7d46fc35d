"""Block-local forward-forward training, diagnostics, and theorem audits."""

from .data import DatasetSpec, ExampleSet, load_idx, make_blobs
from .diagnostics import PredictionSet, paired_bootstrap, predict
from .goodness import (GateConfig, MarginTrace, attenuation_bounds,
                       attenuation_ratio, barrier, barrier_deriv,
                       cumulative_margin, effective_gamma, free_riding_index)
from .losses import (BlockLossBreakdown, LossWeights, block_cumulative_loss,
                     current_block_loss, depth_order_loss, depth_scaled_lambda,
                     margin_loss, mgc_loss, residual_weights, sep_loss,
                     total_block_loss)
from .model import (BlockParams, EMATeacher, Network, block_forward,
                    block_gradients, ema_update, init_network, load_checkpoint,
                    make_teacher, network_forward, save_checkpoint)
from .run import RunResult, final_test_record, train_run
from .trainer import (OptimizerState, TrainConfig, adam_step, derangement,
                      hard_negative_mine, hnm_ramp, locality_audit,
                      mine_hard_negatives, train_step)

__all__ = [name for name in dir() if not name.startswith("_")]
