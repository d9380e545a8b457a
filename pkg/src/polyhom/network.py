"""Binary-tree material network: parameters, forward homogenization, adjoint,
and standalone direct training.

Tree layout
-----------
A network of depth ``N`` has ``2^N`` leaves (material nodes) and ``2^N - 1``
internal tree nodes stored level-major: node ``(l, p)`` lives at flat index
``2^l - 1 + p`` (root is index 0).  The children of ``(l, p)`` are
``(l+1, 2p)`` and ``(l+1, 2p+1)``; at the deepest level they are the leaves
``2p`` and ``2p+1``.  Each leaf ``i`` carries a raw weight ``z_i`` (softplus
-> W_i), and Tait-Bryan angles; each tree node carries interface angles
``(theta, phi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .blocks import homogenize_block_t

_DT = torch.float64

# Voigt index of tensor pair (i, j); order (11, 22, 33, 23, 13, 12).
_VOIGT_OF_PAIR = torch.tensor([[0, 5, 4], [5, 1, 3], [4, 3, 2]])
_PAIR_I = torch.tensor([0, 1, 2, 1, 0, 0])
_PAIR_J = torch.tensor([0, 1, 2, 2, 2, 1])

CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Raised when a training loss blows past 10x its initial value."""


def softplus_weight(z):
    """Non-negative node weight ln(1 + e^z), stable for large |z|."""
    return np.logaddexp(0.0, np.asarray(z, dtype=float))


@dataclass
class OdmnParams:
    """Full trainable set of a depth-N material network."""

    depth: int
    z: np.ndarray          # (2^N,)
    euler: np.ndarray      # (2^N, 3) Tait-Bryan angles per leaf
    angles: np.ndarray     # (2^N - 1, 2) (theta, phi) per tree node, level-major

    def __post_init__(self):
        L = 2 ** self.depth
        self.z = np.asarray(self.z, dtype=float).reshape(L)
        self.euler = np.asarray(self.euler, dtype=float).reshape(L, 3)
        self.angles = np.asarray(self.angles, dtype=float).reshape(L - 1, 2)

    @property
    def n_leaves(self):
        return 2 ** self.depth

    @property
    def n_tree_nodes(self):
        return 2 ** self.depth - 1

    def weights(self):
        return softplus_weight(self.z)

    def copy(self):
        return replace(self, z=self.z.copy(), euler=self.euler.copy(),
                       angles=self.angles.copy())

    @classmethod
    def random(cls, depth, rng):
        L = 2 ** depth
        return cls(
            depth=depth,
            z=np.ones(L),
            euler=rng.uniform(-np.pi, np.pi, size=(L, 3)),
            angles=rng.uniform(0.0, 1.0, size=(L - 1, 2)),
        )

    def save(self, path):
        np.savez(path, version=CHECKPOINT_VERSION, depth=self.depth,
                 z=self.z, euler=self.euler, angles=self.angles)

    @classmethod
    def load(cls, path):
        with np.load(path) as d:
            if int(d["version"]) != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {d['version']}")
            return cls(depth=int(d["depth"]), z=d["z"], euler=d["euler"],
                       angles=d["angles"])


def rotation_matrix_t(euler):
    """Batched extrinsic X-Y-Z rotation matrix, differentiable."""
    a, b, g = euler[..., 0], euler[..., 1], euler[..., 2]
    ca, sa = torch.cos(a), torch.sin(a)
    cb, sb = torch.cos(b), torch.sin(b)
    cg, sg = torch.cos(g), torch.sin(g)
    one = torch.ones_like(a)
    zero = torch.zeros_like(a)
    Rx = torch.stack([one, zero, zero, zero, ca, -sa, zero, sa, ca],
                     dim=-1).reshape(a.shape + (3, 3))
    Ry = torch.stack([cb, zero, sb, zero, one, zero, -sb, zero, cb],
                     dim=-1).reshape(a.shape + (3, 3))
    Rz = torch.stack([cg, -sg, zero, sg, cg, zero, zero, zero, one],
                     dim=-1).reshape(a.shape + (3, 3))
    return Rz @ Ry @ Rx


def voigt_to_tensor_t(C):
    return C[..., _VOIGT_OF_PAIR[:, :, None, None], _VOIGT_OF_PAIR[None, None, :, :]]


def tensor_to_voigt_t(T):
    return T[..., _PAIR_I[:, None], _PAIR_J[:, None], _PAIR_I[None, :], _PAIR_J[None, :]]


def rotate_stiffness_t(C, R):
    """Rotate Voigt stiffness (..., 6, 6) by rotation matrices (..., 3, 3)."""
    T = voigt_to_tensor_t(C)
    Tr = torch.einsum("...ip,...jq,...kr,...ls,...pqrs->...ijkl", R, R, R, R, T)
    return tensor_to_voigt_t(Tr)


def _forward_t(z, euler, angles, C_crystal):
    """Root stiffness for a batch of crystal stiffnesses.

    z: (L,), euler: (L, 3), angles: (L-1, 2) torch tensors;
    C_crystal: (B, 6, 6).  Returns (B, 6, 6).
    """
    depth = int(np.log2(z.shape[0]) + 0.5)
    R = rotation_matrix_t(euler)                       # (L, 3, 3)
    Cs = rotate_stiffness_t(C_crystal[:, None, :, :], R[None])  # (B, L, 6, 6)
    ws = torch.nn.functional.softplus(z)
    for level in range(depth - 1, -1, -1):
        off = 2 ** level - 1
        n = 2 ** level
        theta = angles[off:off + n, 0]
        phi = angles[off:off + n, 1]
        C1, C2 = Cs[:, 0::2], Cs[:, 1::2]
        w1, w2 = ws[0::2], ws[1::2]
        Cs = homogenize_block_t(C1, C2, w1, w2, theta, phi)
        ws = w1 + w2
    return Cs[:, 0]


def _params_to_tensors(params, grad=False):
    t = [torch.as_tensor(a, dtype=_DT) for a in
         (params.z, params.euler, params.angles)]
    if grad:
        for x in t:
            x.requires_grad_(True)
    return t


def forward_homogenize(params, C_crystal):
    """Homogenized stiffness of the network for one or more crystal tensors.

    ``C_crystal`` is (6, 6) or (B, 6, 6); the result matches its shape.
    """
    C = np.asarray(C_crystal, dtype=float)
    single = C.ndim == 2
    Cb = torch.as_tensor(C.reshape(-1, 6, 6), dtype=_DT)
    z, euler, angles = _params_to_tensors(params)
    with torch.no_grad():
        out = _forward_t(z, euler, angles, Cb).numpy()
    return out[0] if single else out


def backward(params, C_crystal, cotangent):
    """Reverse-mode gradients of sum(cotangent * Cbar) over all parameters.

    Returns a dict with arrays ``z`` (L,), ``euler`` (L, 3), ``angles``
    (L-1, 2).
    """
    C = np.asarray(C_crystal, dtype=float)
    Cb = torch.as_tensor(C.reshape(-1, 6, 6), dtype=_DT)
    cot = torch.as_tensor(np.asarray(cotangent, dtype=float).reshape(-1, 6, 6),
                          dtype=_DT)
    z, euler, angles = _params_to_tensors(params, grad=True)
    Cbar = _forward_t(z, euler, angles, Cb)
    gz, ge, ga = torch.autograd.grad((Cbar * cot).sum(), (z, euler, angles))
    return {"z": gz.numpy(), "euler": ge.numpy(), "angles": ga.numpy()}


def relative_frobenius_loss(C_pred, C_ref):
    """Batch-mean of ||C_ref - C_pred||_F^2 / ||C_ref||_F^2 (torch)."""
    num = ((C_ref - C_pred) ** 2).sum(dim=(-2, -1))
    den = (C_ref ** 2).sum(dim=(-2, -1))
    return (num / den).mean()


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.98)
    weight_decay: float = 1e-4
    epochs: int = 500
    val_fraction: float = 0.1
    seed: int = 0
    train_z: bool = True
    train_euler: bool = True
    history: list = field(default_factory=list)


def train_standalone(pairs, params0, config=None):
    """Fit all network parameters to (C_crystal, C_target) pairs with AdamW.

    ``pairs`` is a sequence of (6, 6) array tuples.  Returns
    ``(best_params, history)`` where history rows are
    (epoch, train_loss, val_loss).  The best parameters are taken at the
    minimum validation loss (training loss when no validation split).
    """
    if len(pairs) < 1:
        raise ValueError("need at least one training pair")
    cfg = config or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    Cc = torch.as_tensor(np.array([p[0] for p in pairs], dtype=float), dtype=_DT)
    Ct = torch.as_tensor(np.array([p[1] for p in pairs], dtype=float), dtype=_DT)
    n = len(pairs)
    n_val = int(round(cfg.val_fraction * n)) if n > 4 else 0
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    z, euler, angles = _params_to_tensors(params0, grad=False)
    z = z.clone().requires_grad_(cfg.train_z)
    euler = euler.clone().requires_grad_(cfg.train_euler)
    angles = angles.clone().requires_grad_(True)
    trainable = [p for p in (z, euler, angles) if p.requires_grad]
    opt = torch.optim.AdamW(trainable, lr=cfg.lr, betas=cfg.betas,
                            weight_decay=cfg.weight_decay)

    def eval_loss(idx):
        return relative_frobenius_loss(
            _forward_t(z, euler, angles, Cc[idx]), Ct[idx])

    history = []
    best = None
    best_loss = np.inf
    init_loss = None
    for epoch in range(cfg.epochs):
        opt.zero_grad()
        loss = eval_loss(train_idx)
        loss.backward()
        opt.step()
        train_loss = float(loss.detach())
        if init_loss is None:
            init_loss = train_loss
        # absolute floor keeps optimizer noise around a near-zero start
        # from tripping the guard
        if train_loss > 10.0 * init_loss + 1e-6:
            raise DivergenceError(
                f"loss diverged at epoch {epoch}: {train_loss:.3e} "
                f"(initial {init_loss:.3e}); history={history[-5:]}")
        with torch.no_grad():
            val_loss = float(eval_loss(val_idx)) if n_val else train_loss
        history.append((epoch, train_loss, val_loss))
        if val_loss < best_loss:
            best_loss = val_loss
            best = OdmnParams(params0.depth, z.detach().numpy().copy(),
                              euler.detach().numpy().copy(),
                              angles.detach().numpy().copy())
    return best, history
