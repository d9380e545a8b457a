"""Two-phase stress-equilibrium building block and its adjoint.

A block homogenizes two child stiffnesses ``C1, C2`` (Voigt, engineering
shear) across a planar interface with unit normal ``N(theta, phi)``.  The
child strains differ by a rank-one jump ``sym(a x N)`` whose 3-vector ``a``
is condensed out of the traction-continuity condition ``N . (s1 - s2) = 0``:

    a  = -K^-1 A^T (C1 - C2) ebar,      K = A^T (f2 C1 + f1 C2) A
    Cbar = f1 C1 + f2 C2 - f1 f2 (C1-C2) A K^-1 A^T (C1-C2)

with ``A`` the 6x3 map from ``a`` to the Voigt strain jump.  The forward and
all gradients are implemented with float64 torch tensors so the block can sit
inside larger differentiable computations.
"""

from __future__ import annotations

import numpy as np
import torch

from . import rotations

__all__ = [
    "BlockSingularError",
    "jump_map",
    "equilibrium_direction_t",
    "homogenize_block_t",
    "homogenize_block",
    "block_adjoint",
]

_DT = torch.float64


class BlockSingularError(RuntimeError):
    """Singular interface system; carries the normal and condition number."""

    def __init__(self, normal, cond):
        self.normal = normal
        self.cond = cond
        super().__init__(
            f"singular interface system for normal {normal} (cond={cond:.3e})")


def equilibrium_direction_t(theta, phi):
    """Torch version of the interface normal N(theta, phi)."""
    t = torch.pi * theta
    p = 2.0 * torch.pi * phi
    return torch.stack(
        [torch.cos(p) * torch.sin(t), torch.sin(p) * torch.sin(t),
         torch.cos(t)], dim=-1)


def jump_map(normal):
    """6x3 matrix A with A @ a = voigt(sym(a x N)) in engineering shear.

    ``normal`` may carry leading batch dimensions.
    """
    n1, n2, n3 = normal[..., 0], normal[..., 1], normal[..., 2]
    z = torch.zeros_like(n1)
    rows = [
        torch.stack([n1, z, z], dim=-1),
        torch.stack([z, n2, z], dim=-1),
        torch.stack([z, z, n3], dim=-1),
        torch.stack([z, n3, n2], dim=-1),
        torch.stack([n3, z, n1], dim=-1),
        torch.stack([n2, n1, z], dim=-1),
    ]
    return torch.stack(rows, dim=-2)


def homogenize_block_t(C1, C2, w1, w2, theta, phi):
    """Batched differentiable block homogenization (torch, float64).

    All arguments broadcast over leading batch dimensions; stiffnesses are
    (..., 6, 6), weights and angles scalars or (...,).
    """
    w1 = torch.as_tensor(w1, dtype=_DT)
    w2 = torch.as_tensor(w2, dtype=_DT)
    f1 = w1 / (w1 + w2)
    f2 = 1.0 - f1
    N = equilibrium_direction_t(torch.as_tensor(theta, dtype=_DT),
                                torch.as_tensor(phi, dtype=_DT))
    A = jump_map(N)
    dC = C1 - C2
    Cm = f2[..., None, None] * C1 + f1[..., None, None] * C2
    K = A.transpose(-1, -2) @ Cm @ A
    dCA = dC @ A
    X = torch.linalg.solve(K, dCA.transpose(-1, -2))
    Cv = f1[..., None, None] * C1 + f2[..., None, None] * C2
    Cbar = Cv - (f1 * f2)[..., None, None] * (dCA @ X)
    return 0.5 * (Cbar + Cbar.transpose(-1, -2))


def _as_block_tensors(C1, C2, w1, w2, theta, phi, grad=False):
    tC1 = torch.as_tensor(np.asarray(C1, dtype=float), dtype=_DT)
    tC2 = torch.as_tensor(np.asarray(C2, dtype=float), dtype=_DT)
    tw1 = torch.as_tensor(float(w1), dtype=_DT)
    tw2 = torch.as_tensor(float(w2), dtype=_DT)
    tt = torch.as_tensor(float(theta), dtype=_DT)
    tp = torch.as_tensor(float(phi), dtype=_DT)
    if grad:
        for t in (tC1, tC2, tw1, tw2, tt, tp):
            t.requires_grad_(True)
    return tC1, tC2, tw1, tw2, tt, tp


def _check_singular(C1, C2, w1, w2, theta, phi):
    f1 = w1 / (w1 + w2)
    N = rotations.equilibrium_direction(theta, phi)
    A = jump_map(torch.as_tensor(N, dtype=_DT)).numpy()
    Cm = (1 - f1) * np.asarray(C1) + f1 * np.asarray(C2)
    K = A.T @ Cm @ A
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond > 1e14:
        raise BlockSingularError(N, cond)


def homogenize_block(C1, C2, w1, w2, theta, phi):
    """Homogenized stiffness of a two-child block (numpy in / numpy out)."""
    _check_singular(C1, C2, w1, w2, theta, phi)
    args = _as_block_tensors(C1, C2, w1, w2, theta, phi)
    with torch.no_grad():
        return homogenize_block_t(*args).numpy()


def block_adjoint(C1, C2, w1, w2, theta, phi, cotangent):
    """Pull a 6x6 cotangent of Cbar back onto all block inputs.

    Returns a dict with keys ``C1, C2, w1, w2, theta, phi`` holding the
    contracted gradients (reverse-mode, exact).
    """
    _check_singular(C1, C2, w1, w2, theta, phi)
    args = _as_block_tensors(C1, C2, w1, w2, theta, phi, grad=True)
    Cbar = homogenize_block_t(*args)
    cot = torch.as_tensor(np.asarray(cotangent, dtype=float), dtype=_DT)
    grads = torch.autograd.grad((Cbar * cot).sum(), args)
    keys = ("C1", "C2", "w1", "w2", "theta", "phi")
    return {k: g.detach().numpy() for k, g in zip(keys, grads)}
