"""Central finite-difference gradient check over every parameter entry."""
import torch

from dualnilm.losses import total_loss

#: relative errors use max(|analytic|, |numeric|, FLOOR) as denominator; with
#: h=1e-6 and an O(1) float64 loss the central difference carries ~1e-10 of
#: cancellation noise, so the floor sits a decade above noise / tolerance
FLOOR = 1e-5


def loss_fn(model, x, s, y, kind="L2"):
    def f():
        return total_loss(model(x), s, y, kind=kind).total
    return f


def max_relative_error(model, f, h=1e-6):
    """Largest relative error between autograd and central differences.

    Returns ``(worst, name)``; the model must be float64 and in eval mode.
    """
    model.zero_grad()
    f().backward()
    worst, where = 0.0, None
    with torch.no_grad():
        for name, p in model.named_parameters():
            analytic = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = f().item()
                flat[i] = orig - h
                down = f().item()
                flat[i] = orig
                num = (up - down) / (2 * h)
                a = analytic.view(-1)[i].item()
                err = abs(a - num) / max(abs(a), abs(num), FLOOR)
                if err > worst:
                    worst, where = err, f"{name}[{i}]"
    return worst, where
