"""Finite-difference gradient checks, independent of autograd.

ReLU networks are only piecewise smooth: a step of size ``eps`` can cross an
activation kink and corrupt the central difference for that element. When it
does, the one-sided difference on the other side of the kink is still a
valid estimate, so each element is compared against the closest of the
central, forward and backward differences. The fraction of elements that
needed a one-sided estimate is reported so callers can bound it.
"""

import torch


def _differences(fn, tensor, index, eps):
    flat = tensor.data.view(-1)
    orig = flat[index].item()
    f0 = fn().item()
    flat[index] = orig + eps
    plus = fn().item()
    flat[index] = orig - eps
    minus = fn().item()
    flat[index] = orig
    return (plus - minus) / (2 * eps), (plus - f0) / eps, (f0 - minus) / eps


def _closest(a, candidates):
    central = candidates[0]
    best = min(candidates, key=lambda n: abs(a - n))
    return best, best is not central and abs(a - best) < abs(a - central)


def analytic_grads(fn, tensors):
    for t in tensors:
        t.grad = None
    fn().backward()
    return [t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t) for t in tensors]


def tensor_rel_errors(fn, tensors, eps=1e-3, atol=1e-6):
    """Norm-wise relative error per tensor over every element, plus the kink fraction.

    Tensors whose true gradient vanishes (e.g. a conv bias feeding batch norm)
    are measured against ``atol`` instead of their own norm.
    """
    grads = analytic_grads(fn, tensors)
    errs, kinks, total = [], 0, 0
    with torch.no_grad():
        for t, g in zip(tensors, grads):
            flat_g = g.view(-1)
            num = torch.empty_like(flat_g)
            for i in range(t.numel()):
                num[i], one_sided = _closest(flat_g[i].item(), _differences(fn, t, i, eps))
                kinks += one_sided
            total += t.numel()
            scale = max(flat_g.norm().item(), num.norm().item(), atol)
            errs.append((flat_g - num).norm().item() / scale)
    return errs, kinks / total


def scalar_rel_errors(fn, picks, eps=1e-3, atol=1e-7):
    """Relative error for individual ``(tensor, flat index)`` entries, plus the kink fraction."""
    tensors = [t for t, _ in picks]
    grads = analytic_grads(fn, tensors)
    errs, kinks = [], 0
    with torch.no_grad():
        for (t, i), g in zip(picks, grads):
            a = g.view(-1)[i].item()
            n, one_sided = _closest(a, _differences(fn, t, i, eps))
            kinks += one_sided
            errs.append(abs(a - n) / max(abs(a), abs(n), atol))
    return errs, kinks / len(picks)
