from __future__ import annotations

from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from ..errors import UsageError
from .nn import AdamState, Parameter

NamedParams = Iterable[Tuple[str, Parameter]]


def adam_step(params: Union[NamedParams, Sequence[Parameter]], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place. Gradients are left untouched."""
    for item in params:
        name, p = item if isinstance(item, tuple) else (f"<param {id(item):x}>", item)
        if p.grad is None:
            raise UsageError(f"adam_step: parameter {name!r} has no gradient")
        st = p.adam_state
        if st is None:
            st = p.adam_state = AdamState(np.zeros_like(p.data), np.zeros_like(p.data))
        g = p.grad
        st.step += 1
        st.m = beta1 * st.m + (1.0 - beta1) * g
        st.v = beta2 * st.v + (1.0 - beta2) * (g * g)
        m_hat = st.m / (1.0 - beta1 ** st.step)
        v_hat = st.v / (1.0 - beta2 ** st.step)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)


class Adam:
    def __init__(self, named_params: NamedParams, lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.betas = betas
        self.eps = eps

    def step(self) -> None:
        adam_step(self.params, self.lr, self.betas[0], self.betas[1], self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None
