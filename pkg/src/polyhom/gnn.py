"""Graph-attention predictor of material-network interface angles.

Two GATv2-style attention layers (single head, shared transform), global
mean pooling, a learned pooled projection, and a softplus regression head
emitting one (theta, phi) pair per tree node of a depth-N material network
(level-major, position-minor, theta before phi).  Everything runs in torch
float64; gradients flow end-to-end through the network homogenization so the
whole pipeline trains against DNS stiffness labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import rotations
from .network import OdmnParams, _forward_t, relative_frobenius_loss

_DT = torch.float64

GNN_CHECKPOINT_VERSION = 1
LEAKY_SLOPE = 0.2
SOFTPLUS_BETA = 1.0
SOFTPLUS_THRESHOLD = 20.0
HIDDEN = 64
POOLED = 32


class TrainingAbort(RuntimeError):
    """Raised on NaN gradients or divergent loss; names the offending batch."""


@dataclass
class GatLayer:
    """Single-head GATv2 layer with a shared node transform."""

    theta: torch.Tensor  # (out, in)
    bias: torch.Tensor   # (out,)
    att: torch.Tensor    # (out,)

    @classmethod
    def create(cls, n_in, n_out, gen):
        # Glorot-style init, matching common attention-layer practice
        s = np.sqrt(6.0 / (n_in + n_out))
        theta = (torch.rand((n_out, n_in), generator=gen, dtype=_DT) * 2 - 1) * s
        att = (torch.rand((n_out,), generator=gen, dtype=_DT) * 2 - 1) * s
        return cls(theta=theta, bias=torch.zeros(n_out, dtype=_DT), att=att)

    def parameters(self):
        return [self.theta, self.bias, self.att]


def _directed_edges_with_self_loops(edges, n_nodes):
    """(dst, src) index pair covering both edge directions plus self loops."""
    e = np.asarray(edges, dtype=int).reshape(-1, 2)
    dst = np.concatenate([e[:, 0], e[:, 1], np.arange(n_nodes)])
    src = np.concatenate([e[:, 1], e[:, 0], np.arange(n_nodes)])
    return torch.as_tensor(dst), torch.as_tensor(src)


def _segment_softmax(scores, dst, n_nodes):
    """Softmax of edge scores grouped by destination node."""
    mx = torch.full((n_nodes,), -torch.inf, dtype=scores.dtype)
    mx = mx.scatter_reduce(0, dst, scores, reduce="amax")
    ex = torch.exp(scores - mx[dst])
    den = torch.zeros(n_nodes, dtype=scores.dtype).index_add(0, dst, ex)
    return ex / den[dst]


def gatv2_forward(layer, x, edges):
    """Attention update over neighbors-plus-self.

    ``x`` is (n, in); ``edges`` an (E, 2) undirected list.  Returns (n, out).
    """
    n = x.shape[0]
    if x.shape[1] != layer.theta.shape[1]:
        raise ValueError(
            f"feature width {x.shape[1]} != layer input {layer.theta.shape[1]}")
    h = x @ layer.theta.T + layer.bias          # (n, out)
    dst, src = _directed_edges_with_self_loops(edges, n)
    z = torch.nn.functional.leaky_relu(h[dst] + h[src], LEAKY_SLOPE)
    scores = z @ layer.att
    alpha = _segment_softmax(scores, dst, n)
    out = torch.zeros_like(h).index_add(0, dst, alpha[:, None] * h[src])
    return out


@dataclass
class GnnModel:
    """Full predictor; ``depth`` fixes the head width 2^(depth+1) - 2."""

    depth: int
    layer1: GatLayer
    layer2: GatLayer
    proj_w: torch.Tensor   # (POOLED, HIDDEN)
    proj_b: torch.Tensor   # (POOLED,)
    head_w: torch.Tensor   # (n_out, POOLED)
    head_b: torch.Tensor   # (n_out,)

    @property
    def n_out(self):
        return 2 ** (self.depth + 1) - 2

    @classmethod
    def create(cls, depth, seed=0, n_features=16):
        gen = torch.Generator().manual_seed(seed)
        n_out = 2 ** (depth + 1) - 2

        def lin(n_in, n_o):
            s = np.sqrt(6.0 / (n_in + n_o))
            w = (torch.rand((n_o, n_in), generator=gen, dtype=_DT) * 2 - 1) * s
            return w, torch.zeros(n_o, dtype=_DT)

        l1 = GatLayer.create(n_features, HIDDEN, gen)
        l2 = GatLayer.create(HIDDEN, HIDDEN, gen)
        pw, pb = lin(HIDDEN, POOLED)
        hw, hb = lin(POOLED, n_out)
        return cls(depth, l1, l2, pw, pb, hw, hb)

    def parameters(self):
        return (self.layer1.parameters() + self.layer2.parameters()
                + [self.proj_w, self.proj_b, self.head_w, self.head_b])

    def save(self, path):
        names = ["l1_theta", "l1_bias", "l1_att", "l2_theta", "l2_bias",
                 "l2_att", "proj_w", "proj_b", "head_w", "head_b"]
        arrs = {k: p.detach().numpy() for k, p in zip(names, self.parameters())}
        np.savez(path, version=GNN_CHECKPOINT_VERSION, depth=self.depth, **arrs)

    @classmethod
    def load(cls, path):
        with np.load(path) as d:
            if int(d["version"]) != GNN_CHECKPOINT_VERSION:
                raise ValueError(
                    f"unsupported checkpoint version {d['version']}")
            t = {k: torch.as_tensor(d[k], dtype=_DT) for k in d.files
                 if k not in ("version", "depth")}
            return cls(int(d["depth"]),
                       GatLayer(t["l1_theta"], t["l1_bias"], t["l1_att"]),
                       GatLayer(t["l2_theta"], t["l2_bias"], t["l2_att"]),
                       t["proj_w"], t["proj_b"], t["head_w"], t["head_b"])


def model_forward(model, features, edges):
    """Per-graph angle prediction, shape (2^depth - 1, 2), all entries >= 0.

    ``features`` is (n, 16) (numpy or torch); the output stays a torch
    tensor so callers can differentiate through it.
    """
    x = torch.as_tensor(np.asarray(features, dtype=float) if not
                        torch.is_tensor(features) else features, dtype=_DT)
    if x.shape[0] == 0:
        raise ValueError("empty graph")
    x = torch.relu(gatv2_forward(model.layer1, x, edges))
    x = torch.relu(gatv2_forward(model.layer2, x, edges))
    pooled = x.mean(dim=0)
    p = torch.relu(model.proj_w @ pooled + model.proj_b)
    raw = model.head_w @ p + model.head_b
    out = torch.nn.functional.softplus(raw, beta=SOFTPLUS_BETA,
                                       threshold=SOFTPLUS_THRESHOLD)
    return out.reshape(-1, 2)


@dataclass
class EndToEndConfig:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.98)
    weight_decay: float = 1e-4
    epochs: int = 100
    val_fraction: float = 0.1
    patience: int = 20
    seed: int = 0


@dataclass
class DatasetEntry:
    """One microstructure: its graph, reduced orientations, and labeled
    (crystal stiffness, DNS homogenized stiffness) pairs."""

    features: np.ndarray      # (n, 16)
    edges: np.ndarray         # (E, 2)
    sample_quats: np.ndarray  # (2^depth, 4)
    C_crystal: np.ndarray     # (P, 6, 6)
    C_dns: np.ndarray         # (P, 6, 6)


def _entry_tensors(entry):
    euler = rotations.tait_bryan_from_quat(entry.sample_quats)
    return (torch.as_tensor(np.asarray(entry.features, float), dtype=_DT),
            np.asarray(entry.edges, int),
            torch.as_tensor(euler, dtype=_DT),
            torch.as_tensor(np.asarray(entry.C_crystal, float), dtype=_DT),
            torch.as_tensor(np.asarray(entry.C_dns, float), dtype=_DT))


def pipeline_loss(model, entries, depth):
    """Mean over entries of the relative-Frobenius stiffness loss with the
    model's predicted angles, fixed leaf orientations, and unit z."""
    z = torch.ones(2 ** depth, dtype=_DT)
    total = 0.0
    for feats, edges, euler, Cc, Ct in entries:
        angles = model_forward(model, feats, edges)
        Cbar = _forward_t(z, euler, angles, Cc)
        total = total + relative_frobenius_loss(Cbar, Ct)
    return total / len(entries)


def train_end_to_end(dataset, depth, config=None, model=None,
                     val_dataset=None):
    """Joint training of the predictor against DNS labels with AdamW.

    ``dataset`` is a list of :class:`DatasetEntry`.  Returns
    ``(best_model, history)`` with history rows (epoch, train, val); the
    best model is the epoch snapshot with minimal validation loss (training
    loss when the validation split is empty).  When ``val_dataset`` is
    given it is used as the validation split verbatim and all of
    ``dataset`` trains; otherwise a seeded random fraction is held out.
    """
    cfg = config or EndToEndConfig()
    if not dataset:
        raise ValueError("empty dataset")
    model = model or GnnModel.create(depth, seed=cfg.seed)
    for p in model.parameters():
        p.requires_grad_(True)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas,
                            weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    entries = [_entry_tensors(e) for e in dataset]
    if val_dataset is not None:
        train = entries
        val = [_entry_tensors(e) for e in val_dataset]
        n_val = len(val)
    else:
        n = len(entries)
        n_val = int(round(cfg.val_fraction * n)) if n > 4 else 0
        perm = rng.permutation(n)
        val = [entries[i] for i in perm[:n_val]]
        train = [entries[i] for i in perm[n_val:]]

    history = []
    best_state = None
    best_loss = np.inf
    init_loss = None
    since_best = 0
    for epoch in range(cfg.epochs):
        opt.zero_grad()
        loss = pipeline_loss(model, train, depth)
        loss.backward()
        for p in model.parameters():
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise TrainingAbort(f"NaN gradient at epoch {epoch}")
        opt.step()
        train_loss = float(loss.detach())
        if not np.isfinite(train_loss):
            raise TrainingAbort(f"non-finite loss at epoch {epoch}")
        if init_loss is None:
            init_loss = train_loss
        if train_loss > 10.0 * init_loss + 1e-6:
            raise TrainingAbort(
                f"loss diverged at epoch {epoch}: {train_loss:.3e} "
                f"(initial {init_loss:.3e})")
        with torch.no_grad():
            val_loss = float(pipeline_loss(model, val, depth)) if n_val \
                else train_loss
        history.append((epoch, train_loss, val_loss))
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = [p.detach().clone() for p in model.parameters()]
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    if best_state is not None:
        with torch.no_grad():
            for p, b in zip(model.parameters(), best_state):
                p.copy_(b)
    for p in model.parameters():
        p.requires_grad_(False)
    return model, history


def predict_params(model, features, edges, sample_quats):
    """Assemble a full material-network parameter set from a graph."""
    with torch.no_grad():
        angles = model_forward(model, features, edges).numpy()
    euler = rotations.tait_bryan_from_quat(np.asarray(sample_quats))
    L = 2 ** model.depth
    return OdmnParams(depth=model.depth, z=np.ones(L), euler=euler,
                      angles=angles)
