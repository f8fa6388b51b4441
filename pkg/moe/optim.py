"""
Adam with a linear warmup to a constant learning rate.
"""

import numpy as np


class Adam:

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.95), eps=1e-8, warmup_steps=100):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.warmup_steps = int(warmup_steps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def learning_rate(self, t):
        if self.warmup_steps <= 0:
            return self.lr
        return self.lr * min(1.0, t / self.warmup_steps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        lr = self.learning_rate(self.t)
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data = p.data - lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
