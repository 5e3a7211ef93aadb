"""Small convolutional epsilon-predictor and its training loop.

The network is a three-level encoder/decoder with skip connections. A sinusoidal
embedding of the step index is projected by a learned linear map and added to
every block's feature maps.
"""

from __future__ import annotations

import copy
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DNZ1"


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class Architecture:
    image_size: tuple[int, int] = (16, 16)
    channels: tuple[int, int, int] = (16, 32, 64)
    time_dim: int = 64
    groups: int = 8
    T: int = 200

    def __post_init__(self):
        h, w = self.image_size
        if min(h, w, self.time_dim, self.groups, self.T, *self.channels) <= 0:
            raise ValueError(f"architecture dimensions must be positive: {self}")
        if h % 4 or w % 4:
            raise ValueError("image sides must be divisible by 4 (two downsamplings)")
        if any(c % self.groups for c in self.channels):
            raise ValueError("channel widths must be divisible by the group count")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            image_size=tuple(d["image_size"]),
            channels=tuple(d["channels"]),
            time_dim=int(d["time_dim"]),
            groups=int(d["groups"]),
            T=int(d["T"]),
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    loss_kind: str = "eps_mse"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.loss_kind != "eps_mse":
            raise ValueError(f"unsupported loss_kind {self.loss_kind!r}")


def timestep_features(t: torch.Tensor, dim: int, T: int) -> torch.Tensor:
    # steps are scaled to a [0, 1000] range so the frequency ladder covers the schedule
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = (t.to(torch.float64) * (1000.0 / T))[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class _Block(nn.Module):
    def __init__(self, c_in: int, c_out: int, time_dim: int, groups: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, c_out)
        self.time = nn.Linear(time_dim, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, c_out)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, emb):
        h = F.silu(self.norm1(self.conv1(x))) + self.time(emb)[:, :, None, None]
        h = F.silu(self.norm2(self.conv2(h)))
        return h + self.skip(x)


class EpsNet(nn.Module):
    def __init__(self, arch: Architecture):
        super().__init__()
        self.arch = arch
        c1, c2, c3 = arch.channels
        td, g = arch.time_dim, arch.groups
        self.time_proj = nn.Linear(td, td)
        self.stem = nn.Conv2d(1, c1, 3, padding=1)
        self.enc1 = _Block(c1, c1, td, g)
        self.enc2 = _Block(c1, c2, td, g)
        self.mid = _Block(c2, c3, td, g)
        self.dec2 = _Block(c3 + c2, c2, td, g)
        self.dec1 = _Block(c2 + c1, c1, td, g)
        self.head = nn.Conv2d(c1, 1, 3, padding=1)

    def forward(self, x, t):
        feats = timestep_features(t, self.arch.time_dim, self.arch.T).to(x.dtype)
        emb = F.silu(self.time_proj(feats))
        h1 = self.enc1(self.stem(x), emb)
        h2 = self.enc2(F.avg_pool2d(h1, 2), emb)
        h3 = self.mid(F.avg_pool2d(h2, 2), emb)
        u2 = self.dec2(torch.cat([F.interpolate(h3, scale_factor=2.0), h2], dim=1), emb)
        u1 = self.dec1(torch.cat([F.interpolate(u2, scale_factor=2.0), h1], dim=1), emb)
        return self.head(u1)


class DenoiserParams:
    """A parameter snapshot of :class:`EpsNet` plus its architecture.

    Calling the object predicts noise, so it can be passed anywhere an
    ``eps(x, t)`` callable is expected.
    """

    def __init__(self, net: EpsNet):
        self.net = net.eval()
        self.arch = net.arch

    @property
    def n_params(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def state_vector(self) -> np.ndarray:
        return np.concatenate([p.detach().cpu().numpy().ravel() for p in self.net.state_dict().values()])

    def __call__(self, x_t, t):
        return predict_eps(self, x_t, t)


def init_denoiser(arch: Architecture | None = None, seed: int = 0) -> DenoiserParams:
    arch = arch or Architecture()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = EpsNet(arch)
    return DenoiserParams(net)


def _as_batch(x: np.ndarray, arch: Architecture) -> tuple[np.ndarray, tuple]:
    x = np.asarray(x)
    h, w = arch.image_size
    if x.shape[-2:] != (h, w) or x.ndim not in (2, 3):
        raise ValueError(f"expected shape (H, W) or (B, H, W) with H, W = {h}, {w}; got {x.shape}")
    return x.reshape(-1, 1, h, w), x.shape


def predict_eps(p: DenoiserParams, x_t, t) -> np.ndarray:
    """Predict the noise component of ``x_t`` at step ``t`` (scalar or one per batch row)."""
    xb, shape = _as_batch(x_t, p.arch)
    if not np.all(np.isfinite(xb)):
        raise FloatingPointError("non-finite input to predict_eps")
    tt = np.broadcast_to(np.asarray(t, dtype=np.int64), (xb.shape[0],))
    if tt.min() < 1 or tt.max() > p.arch.T:
        raise IndexError(f"step outside [1, {p.arch.T}]")
    dtype = next(p.net.parameters()).dtype
    with torch.no_grad():
        out = p.net(torch.as_tensor(xb, dtype=dtype), torch.tensor(tt))
    return out.numpy().astype(np.float64).reshape(shape)


def eps_loss(net: EpsNet, x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor, s: NoiseSchedule) -> torch.Tensor:
    abar = torch.tensor(s.alpha_bar, dtype=x0.dtype)[t - 1][:, None, None, None]
    x_t = abar.sqrt() * x0 + (1 - abar).sqrt() * eps
    return F.mse_loss(net(x_t, t), eps)


def train_denoiser(
    p: DenoiserParams, dataset: np.ndarray, s: NoiseSchedule, cfg: TrainConfig
) -> tuple[DenoiserParams, list[float]]:
    """Fit the epsilon-MSE objective; the input snapshot is left untouched."""
    data = np.asarray(dataset, dtype=np.float32)
    if data.shape[0] == 0:
        raise ValueError("empty dataset")
    if s.T != p.arch.T:
        raise ValueError(f"schedule has T={s.T} but the network embeds T={p.arch.T}")
    xb, _ = _as_batch(data, p.arch)
    x_all = torch.from_numpy(np.ascontiguousarray(xb))

    net = copy.deepcopy(p.net).train()
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999))
    gen = torch.Generator().manual_seed(cfg.seed)
    history = []
    n = x_all.shape[0]
    for epoch in range(cfg.epochs):
        order = torch.randperm(n, generator=gen)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            x0 = x_all[order[start : start + cfg.batch_size]]
            t = torch.randint(1, s.T + 1, (x0.shape[0],), generator=gen)
            eps = torch.randn(x0.shape, generator=gen)
            loss = eps_loss(net, x0, t, eps, s)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * x0.shape[0]
            seen += x0.shape[0]
        mean_loss = total / seen
        if not math.isfinite(mean_loss):
            raise TrainingError(epoch, mean_loss)
        history.append(mean_loss)
        log.debug("epoch %d loss %.5f", epoch, mean_loss)
    return DenoiserParams(net.eval()), history


def gradient_check(
    p: DenoiserParams,
    x0: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    s: NoiseSchedule,
    n_probe: int = 100,
    h: float = 1e-6,
    seed: int = 0,
) -> np.ndarray:
    """Relative error between autograd and central differences on ``n_probe`` random weights.

    Runs in float64 on a copy of the network over a frozen mini-batch.
    """
    net = copy.deepcopy(p.net).double().eval()
    x0_t = torch.as_tensor(_as_batch(x0, p.arch)[0], dtype=torch.float64)
    eps_t = torch.as_tensor(_as_batch(eps, p.arch)[0], dtype=torch.float64)
    t_t = torch.as_tensor(np.asarray(t, dtype=np.int64))

    loss = eps_loss(net, x0_t, t_t, eps_t, s)
    params = list(net.parameters())
    grads = torch.autograd.grad(loss, params)
    flat_grad = torch.cat([g.reshape(-1) for g in grads])
    sizes = np.array([q.numel() for q in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    rng = np.random.default_rng(seed)
    probe = rng.choice(offsets[-1], size=n_probe, replace=False)
    errs = np.empty(n_probe)
    with torch.no_grad():
        for k, flat in enumerate(probe):
            i = int(np.searchsorted(offsets, flat, side="right") - 1)
            view = params[i].view(-1)
            j = int(flat - offsets[i])
            orig = view[j].item()
            view[j] = orig + h
            up = eps_loss(net, x0_t, t_t, eps_t, s).item()
            view[j] = orig - h
            down = eps_loss(net, x0_t, t_t, eps_t, s).item()
            view[j] = orig
            fd = (up - down) / (2 * h)
            an = flat_grad[flat].item()
            errs[k] = abs(an - fd) / max(abs(an), abs(fd), 1e-10)
    return errs


def save_checkpoint(path, p: DenoiserParams) -> None:
    state = p.net.state_dict()
    header = {
        "arch": p.arch.to_dict(),
        "params": [[name, list(v.shape)] for name, v in state.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for v in state.values():
        buf.write(v.detach().cpu().numpy().astype("<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> DenoiserParams:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic at byte 0: expected {CHECKPOINT_MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 8:
        raise ValueError("checkpoint truncated in header length at byte 4")
    (n,) = struct.unpack_from("<I", raw, 4)
    if len(raw) < 8 + n:
        raise ValueError(f"checkpoint truncated in descriptor at byte {len(raw)}")
    header = json.loads(raw[8 : 8 + n])
    net = EpsNet(Architecture.from_dict(header["arch"]))
    state = net.state_dict()
    pos = 8 + n
    new_state = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        end = pos + 4 * count
        if end > len(raw):
            raise ValueError(f"checkpoint truncated in tensor {name!r} at byte {pos}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape)
        new_state[name] = torch.from_numpy(arr.astype(np.float32)).to(state[name].dtype)
        pos = end
    if pos != len(raw):
        raise ValueError(f"{len(raw) - pos} trailing bytes after weights at byte {pos}")
    net.load_state_dict(new_state)
    return DenoiserParams(net)
