from .config import ConfigError, TrainerConfig
from .losses import (BatchError, DistillSample, Group, LossResult, Sample, UpdateBatch,
                     distill_loss, group_advantages, od_loss, policy_loss)
from .loop import (EvalReport, IterationMetrics, Reflection, erl_iteration, evaluate, reflect,
                   rlvr_iteration)
from .memory import MemoryState, memory_update
