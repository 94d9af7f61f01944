"""Shared test utilities: central-difference gradient oracle."""

import torch


def central_difference_grads(fn, params, eps=1e-5):
    """Finite-difference gradients of scalar fn() w.r.t. each tensor in params.

    fn must be re-evaluable; params are perturbed in place and restored.
    Use double precision throughout.
    """
    def poke(flat, i, value):
        with torch.no_grad():
            flat[i] = value

    grads = []
    for p in params:
        g = torch.zeros_like(p)
        flat = p.view(-1)
        gflat = g.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            poke(flat, i, orig + eps)
            up = float(fn().detach())
            poke(flat, i, orig - eps)
            down = float(fn().detach())
            poke(flat, i, orig)
            with torch.no_grad():
                gflat[i] = (up - down) / (2.0 * eps)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric):
    """max |a - n| / max(1, |a|_inf, |n|_inf), per tensor pair."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = max(1.0, a.abs().max().item(), n.abs().max().item())
        worst = max(worst, (a - n).abs().max().item() / denom)
    return worst


def check_parameter_gradients(fn, params, eps=1e-5, tol=1e-3):
    """Backprop fn() and compare against central differences; returns error."""
    for p in params:
        p.grad = None
    value = fn()
    value.backward()
    analytic = [p.grad.detach().clone() if p.grad is not None
                else torch.zeros_like(p) for p in params]
    numeric = central_difference_grads(fn, [p.detach() for p in params], eps=eps)
    err = max_relative_error(analytic, numeric)
    assert err < tol, f"gradient mismatch: relative error {err:.3e} >= {tol}"
    return err
