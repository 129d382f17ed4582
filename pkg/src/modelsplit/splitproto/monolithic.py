"""Single-process reference training loop (the equivalence oracle for split runs)."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..nn.layers import ModelSpec
from ..nn.model import backward, evaluate_loss, forward
from ..nn.optim import OptimizerState, lr_at, sgd_step
from ..nn.params import ParamStore
from ..runs import TaskData, TrainConfig, TrainingRun, batches, check_finite_loss


def run_training(model: ModelSpec, params: ParamStore, data: TaskData, config: TrainConfig,
                 trainable: np.ndarray | None = None,
                 on_commit: Callable[[int, ParamStore], None] | None = None) -> TrainingRun:
    """Train for ``config.budget`` steps, evaluating the held-out loss on the eval grid.

    ``trainable`` freezes every coordinate where it is False. ``on_commit(step,
    params)`` sees the parameters after each update.
    """
    schedule = config.lr_schedule()
    state = OptimizerState.zeros(params, config.momentum, config.weight_decay)
    eval_at = set(config.eval_steps())
    points = []
    committed = 0
    order = batches(len(data.train), config.batch_size, config.data_seed)
    for step in range(config.budget + 1):
        if step in eval_at:
            loss = evaluate_loss(model, params, data.test.x, data.test.y)
            check_finite_loss(loss, step)
            points.append((step, loss))
        if step == config.budget:
            break
        idx = next(order)
        fwd = forward(model, params, data.train.x[idx], data.train.y[idx])
        check_finite_loss(fwd.loss, step)
        grads = backward(model, params, fwd)
        params, state = sgd_step(params, grads, state, lr_at(schedule, step), trainable)
        committed = step + 1
        if on_commit is not None:
            on_commit(step, params)
    run = TrainingRun(points, config.budget, config.seed, config.digest(), committed)
    run.params = params
    return run
