"""Residual feature propagation read as an ODE integrator.

A residual layer ``y + dt * act(K y + b)`` is one forward-Euler step of
``dy/dt = act(w(t) * y + b(t))``. :func:`rk2_step` adds a gated second-order
(Runge-Kutta style) update whose gate is learned per channel.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = ["OdeState", "OdeCell", "OdePropagation", "euler_step", "rk2_step", "propagate"]


@dataclass
class OdeState:
    y: torch.Tensor
    t_index: int = 0


class OdeCell(nn.Module):
    """One time step: convolution ``K(w_t)``, bias ``b_t``, activation and step size.

    ``gate_logit`` holds one logit per channel; ``sigmoid(gate_logit)`` mixes the
    two slope estimates of :func:`rk2_step` and is broadcast over space.
    """

    def __init__(
        self,
        channels: int,
        kernel_size: int = 3,
        step_size: float = 1.0,
        activation: Callable[[torch.Tensor], torch.Tensor] | None = None,
        gate_init: float = 0.0,
    ):
        super().__init__()
        if step_size <= 0:
            raise ValueError(f"step size must be positive, got {step_size}")
        if kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.conv = nn.Conv2d(channels, channels, kernel_size, padding=kernel_size // 2, bias=True)
        self.step_size = float(step_size)
        self.activation = activation if activation is not None else F.silu
        self.gate_logit = nn.Parameter(torch.full((channels,), float(gate_init)))

    def slope(self, y: torch.Tensor) -> torch.Tensor:
        return self.activation(self.conv(y))

    @property
    def gate(self) -> torch.Tensor:
        return torch.sigmoid(self.gate_logit).view(1, -1, 1, 1)


def euler_step(state: OdeState, cell: OdeCell) -> OdeState:
    """``y_{t+1} = y_t + dt * act(K(w_t) y_t + b_t)``."""
    y = state.y + cell.step_size * cell.slope(state.y)
    return OdeState(y, state.t_index + 1)


def rk2_step(state: OdeState, cell: OdeCell) -> OdeState:
    """Gated two-stage update.

    k1 = f(y), k2 = f(y + dt k1), y' = y + dt ((1 - g) k1 + g k2). With g = 0 this
    is exactly :func:`euler_step`; g = 0.5 gives Heun's method.
    """
    y, dt = state.y, cell.step_size
    k1 = cell.slope(y)
    k2 = cell.slope(y + dt * k1)
    g = cell.gate
    y = y + dt * ((1 - g) * k1 + g * k2)
    return OdeState(y, state.t_index + 1)


_SCHEMES = {"euler": euler_step, "rk2": rk2_step}


def propagate(
    x: torch.Tensor,
    cells: Sequence[OdeCell],
    scheme: str = "rk2",
    projection: nn.Module | None = None,
) -> torch.Tensor:
    """Project ``y(0) = L x`` and apply one step per cell; returns the final state."""
    if len(cells) == 0:
        raise ValueError("propagate needs at least one cell")
    try:
        step = _SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {sorted(_SCHEMES)}") from None
    state = OdeState(projection(x) if projection is not None else x, 0)
    for cell in cells:
        state = step(state, cell)
    return state.y


class OdePropagation(nn.Module):
    """Trainable stack of :class:`OdeCell` with a 1x1 input projection."""

    def __init__(self, c1: int, c2: int, steps: int = 2, scheme: str = "rk2", step_size: float = 1.0):
        super().__init__()
        self.projection = nn.Conv2d(c1, c2, 1, bias=False)
        self.cells = nn.ModuleList(OdeCell(c2, step_size=step_size) for _ in range(steps))
        self.scheme = scheme

    def forward(self, x):
        return propagate(x, list(self.cells), self.scheme, self.projection)

