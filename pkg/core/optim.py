"""Gradient-descent optimizers over named Parameters."""

from typing import Dict, List, Sequence

import numpy as np

from autodiff.tensor import DTYPE, Parameter
from core.errors import ConfigError
from core.schemas import TrainConfig


class Optimizer:
    """Base optimizer; step() consumes a name -> gradient map from the tape."""

    def __init__(self, parameters: Sequence[Parameter], learning_rate: float):
        if learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {learning_rate}")
        self.parameters: List[Parameter] = list(parameters)
        self.learning_rate = learning_rate
        self.steps = 0

    def step(self, grads: Dict[str, np.ndarray]):
        self.steps += 1
        for param in self.parameters:
            grad = grads.get(param.name)
            if grad is not None:
                self._update(param, grad)

    def _update(self, param: Parameter, grad: np.ndarray):
        raise NotImplementedError


class SGD(Optimizer):
    def _update(self, param: Parameter, grad: np.ndarray):
        param.data = (param.data - DTYPE(self.learning_rate) * grad).astype(DTYPE)


class Adam(Optimizer):
    """Adam with bias-corrected moments."""

    def __init__(
        self,
        parameters: Sequence[Parameter],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        super().__init__(parameters, learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {p.name: np.zeros_like(p.data) for p in self.parameters}
        self.v = {p.name: np.zeros_like(p.data) for p in self.parameters}

    def _update(self, param: Parameter, grad: np.ndarray):
        m = self.beta1 * self.m[param.name] + (1.0 - self.beta1) * grad
        v = self.beta2 * self.v[param.name] + (1.0 - self.beta2) * grad * grad
        self.m[param.name] = m.astype(DTYPE)
        self.v[param.name] = v.astype(DTYPE)
        m_hat = m / (1.0 - self.beta1 ** self.steps)
        v_hat = v / (1.0 - self.beta2 ** self.steps)
        update = self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        param.data = (param.data - update).astype(DTYPE)


def make_optimizer(config: TrainConfig, parameters: Sequence[Parameter]) -> Optimizer:
    if config.optimizer == "sgd":
        return SGD(parameters, config.learning_rate)
    return Adam(
        parameters,
        learning_rate=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
    )
