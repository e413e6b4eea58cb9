import typing

import torch

__all__ = ('AdamMoments', 'adam_update', 'Adam')


class AdamMoments(typing.NamedTuple):
    m: torch.Tensor
    v: torch.Tensor
    t: int


def zero_moments(param: torch.Tensor) -> AdamMoments:
    return AdamMoments(torch.zeros_like(param), torch.zeros_like(param), 0)


def adam_update(
    param: torch.Tensor,
    grad: torch.Tensor,
    moments: AdamMoments,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> typing.Tuple[torch.Tensor, AdamMoments]:
    """One bias-corrected Adam step; returns new tensors and leaves the inputs untouched."""
    t = moments.t + 1
    m = beta1 * moments.m + (1 - beta1) * grad
    v = beta2 * moments.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return param - lr * m_hat / (v_hat.sqrt() + eps), AdamMoments(m, v, t)


class Adam:
    """Applies ``adam_update`` in place to a named parameter set."""

    def __init__(
        self,
        parameters: typing.Dict[str, torch.nn.Parameter],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.parameters = dict(parameters)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.moments = {name: zero_moments(p.detach()) for name, p in self.parameters.items()}

    def zero_grad(self):
        for p in self.parameters.values():
            p.grad = None

    @torch.no_grad()
    def step(self):
        for name, p in self.parameters.items():
            if p.grad is None:
                continue
            updated, self.moments[name] = adam_update(
                p.detach(), p.grad, self.moments[name], self.lr, self.beta1, self.beta2, self.eps
            )
            p.copy_(updated)

    def state_dict(self) -> typing.Dict[str, torch.Tensor]:
        state = {}
        for name, moments in self.moments.items():
            state[f"{name}.m"] = moments.m
            state[f"{name}.v"] = moments.v
            state[f"{name}.t"] = torch.tensor(moments.t, dtype=torch.int64)
        return state

    def load_state_dict(self, state: typing.Dict[str, torch.Tensor]):
        for name, p in self.parameters.items():
            m, v = state[f"{name}.m"], state[f"{name}.v"]
            if m.shape != p.shape or v.shape != p.shape:
                raise KeyError(name)
            self.moments[name] = AdamMoments(m.clone(), v.clone(), int(state[f"{name}.t"]))
