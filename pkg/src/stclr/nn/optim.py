"""Optimizer steps and the plateau learning-rate schedule.

The step functions are pure functions of (parameter values, gradients,
state): state lives on the Parameter itself, so replaying a recorded
gradient trajectory reproduces parameters exactly.
"""

import numpy as np


def sgd_momentum_step(params, lr, momentum=0.9, weight_decay=0.0):
    """g' = g + wd*p;  v <- momentum*v + g';  p <- p - lr*v."""
    for p in params:
        g = p.grad
        if weight_decay:
            g = g + weight_decay * p.data
        if p.momentum is None:
            p.momentum = np.zeros_like(p.data)
        p.momentum *= momentum
        p.momentum += g
        p.data -= lr * p.momentum


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update."""
    for p in params:
        g = p.grad
        if p.m is None:
            p.m = np.zeros_like(p.data)
            p.v = np.zeros_like(p.data)
        p.step_count += 1
        t = p.step_count
        p.m *= beta1
        p.m += (1 - beta1) * g
        p.v *= beta2
        p.v += (1 - beta2) * (g * g)
        m_hat = p.m / (1 - beta1**t)
        v_hat = p.v / (1 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class PlateauScheduler:
    """Decay the learning rate when a monitored loss stops improving.

    Improvement means the metric drops below the best seen by more than
    `threshold`. After `patience` consecutive non-improving observations the
    rate is multiplied by `factor` (never below `min_lr`) and the counter
    resets.
    """

    def __init__(self, lr, factor=0.1, patience=3, threshold=1e-4, min_lr=1e-7):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = float("inf")
        self.bad_epochs = 0

    def step(self, metric):
        """Record one epoch's metric; returns the (possibly decayed) lr."""
        if metric < self.best - self.threshold:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr

    def state(self):
        return {
            "lr": self.lr,
            "best": self.best,
            "bad_epochs": self.bad_epochs,
        }

    def load_state(self, state):
        self.lr = state["lr"]
        self.best = state["best"]
        self.bad_epochs = state["bad_epochs"]
