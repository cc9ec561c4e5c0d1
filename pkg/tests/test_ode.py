import math

import pytest
import torch
import torch.nn as nn

from fusionnet.ode import OdeCell, OdePropagation, OdeState, euler_step, propagate, rk2_step


def scalar_cell(k: float, b: float = 0.0, dt: float = 1.0, act=None, gate_logit: float = 0.0) -> OdeCell:
    cell = OdeCell(1, kernel_size=1, step_size=dt, activation=act, gate_init=gate_logit).double()
    with torch.no_grad():
        cell.conv.weight.fill_(k)
        cell.conv.bias.fill_(b)
    return cell


def identity(x):
    return x


def test_zero_kernel_is_fixed_point():
    cell = OdeCell(4)
    with torch.no_grad():
        cell.conv.weight.zero_()
        cell.conv.bias.zero_()
    y = torch.randn(2, 4, 5, 5)
    assert torch.equal(euler_step(OdeState(y), cell).y, y)
    assert torch.equal(rk2_step(OdeState(y), cell).y, y)


def test_unit_step_is_residual_block():
    cell = OdeCell(3)
    y = torch.randn(1, 3, 4, 4)
    assert torch.equal(euler_step(OdeState(y), cell).y, y + torch.nn.functional.silu(cell.conv(y)))


def test_scalar_closed_form():
    cell = scalar_cell(-1.0, dt=0.5, act=identity)
    out = euler_step(OdeState(torch.ones(1, 1, 1, 1, dtype=torch.float64)), cell)
    assert out.y.item() == 0.5 and out.t_index == 1


def test_rk2_with_half_gate_is_heun():
    k, dt = -0.7, 0.3
    cell = scalar_cell(k, b=0.2, dt=dt, act=identity, gate_logit=0.0)
    y0 = 1.3
    f = lambda y: k * y + 0.2
    k1 = f(y0)
    k2 = f(y0 + dt * k1)
    got = rk2_step(OdeState(torch.full((1, 1, 1, 1), y0, dtype=torch.float64)), cell).y.item()
    assert got == pytest.approx(y0 + dt * (k1 + k2) / 2, abs=1e-15)


def test_single_cell_equals_single_step_and_zero_cells_return_projection():
    torch.manual_seed(0)
    x = torch.randn(1, 3, 4, 4)
    cell = OdeCell(3)
    assert torch.equal(propagate(x, [cell], "euler"), euler_step(OdeState(x), cell).y)
    proj = nn.Conv2d(3, 5, 1, bias=False)
    zero = [OdeCell(5) for _ in range(3)]
    for c in zero:
        with torch.no_grad():
            c.conv.weight.zero_()
            c.conv.bias.zero_()
    assert torch.allclose(propagate(x, zero, "rk2", proj), proj(x))


def test_propagate_errors():
    with pytest.raises(ValueError):
        propagate(torch.zeros(1, 1, 1, 1), [])
    with pytest.raises(ValueError):
        propagate(torch.zeros(1, 1, 1, 1), [OdeCell(1)], "rk4")
    with pytest.raises(ValueError):
        OdeCell(1, step_size=0.0)


def test_two_cell_chain_gradient_matches_finite_differences():
    torch.manual_seed(0)
    m = OdePropagation(1, 1, steps=2, scheme="rk2", step_size=0.5).double()
    x = torch.randn(1, 1, 1, 1, dtype=torch.float64)
    params = [p for p in m.parameters()]
    out = m(x).sum()
    grads = torch.autograd.grad(out, params)
    h = 1e-6
    for p, g in zip(params, grads):
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            up = m(x).sum().item()
            flat[i] = old - h
            dn = m(x).sum().item()
            flat[i] = old
            fd = (up - dn) / (2 * h)
            assert abs(fd - g.view(-1)[i].item()) <= 1e-4 * max(1.0, abs(fd))


def test_gradient_reaches_gate():
    m = OdePropagation(2, 2, steps=1)
    m(torch.randn(1, 2, 3, 3)).sum().backward()
    assert m.cells[0].gate_logit.grad is not None
    assert math.isfinite(m.cells[0].gate_logit.grad.abs().sum().item())
