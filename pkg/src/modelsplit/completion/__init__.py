"""Model-completion hardness: cost-to-threshold metrics, retraining procedures, experiments."""
from .metrics import (CostRecord, MCHardnessEstimate, NoUsableProcedure, ProcedureStats, ZeroCostThreshold,
                      best_loss, mc_hardness, seed_ratio, threshold, training_cost)
from .procedures import NotApplicable, RetrainProcedure
from .experiment import (ExperimentFailed, ExperimentResult, estimates_from_curves, run_completion_experiment,
                         run_seed)
