"""DPOT-style operator: patch encoding, Fourier attention layers, patch decoding.

The Fourier attention layer is our reading of the block diagram: the token
grid is transformed, embedded channels are split into heads, each head is
mixed by a learned complex matrix per retained mode, heads are blended by a
softmax-weighted mixing matrix, and a second shared complex mixing follows
before the inverse transform.
"""
import torch
import torch.nn.functional as F
from torch import nn

from .base import OperatorConfig, StepOperator
from .layers import PatchEmbed, PointwiseMLP, retained_modes


def complex_gelu(z):
    return torch.complex(F.gelu(z.real), F.gelu(z.imag))


class FourierBlockMixing(nn.Module):
    def __init__(self, width, heads, modes, tx, ty):
        super().__init__()
        self.heads, self.modes = heads, modes
        self.kx, self.ky = retained_modes(tx, ty, modes)
        dh = width // heads
        scale = 1.0 / (dh * dh)
        self.w_mode = nn.Parameter(scale * torch.randn(heads, dh, dh, len(self.kx), len(self.ky), 2))
        self.w_out = nn.Parameter(scale * torch.randn(heads, dh, dh, 2))
        self.head_logits = nn.Parameter(torch.zeros(heads, heads))

    def forward(self, x):
        b, d, tx, ty = x.shape
        kx = torch.as_tensor(self.kx)
        x_ft = torch.fft.rfft2(x)[..., kx, :][..., : len(self.ky)]
        x_ft = x_ft.reshape(b, self.heads, d // self.heads, len(self.kx), len(self.ky))
        y = torch.einsum("bgixy,gioxy->bgoxy", x_ft, torch.view_as_complex(self.w_mode))
        y = complex_gelu(y)
        mix = torch.softmax(self.head_logits, dim=-1).to(y.dtype)
        y = torch.einsum("hg,bgoxy->bhoxy", mix, y)
        y = torch.einsum("bgixy,gio->bgoxy", y, torch.view_as_complex(self.w_out))
        out_ft = torch.zeros(b, d, tx, ty // 2 + 1, dtype=y.dtype, device=x.device)
        out_ft[:, :, kx, : len(self.ky)] = y.reshape(b, d, len(self.kx), len(self.ky))
        return torch.fft.irfft2(out_ft, s=(tx, ty))


class FourierAttentionLayer(nn.Module):
    def __init__(self, width, heads, modes, tx, ty):
        super().__init__()
        self.norm1 = nn.GroupNorm(heads, width)
        self.mixing = FourierBlockMixing(width, heads, modes, tx, ty)
        self.norm2 = nn.GroupNorm(heads, width)
        self.mlp = PointwiseMLP(width, 2 * width, width)

    def forward(self, x):
        x = x + self.mixing(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class DPOT(StepOperator):
    def __init__(self, config: OperatorConfig):
        super().__init__(config)
        c = config
        p = c.patch_size
        tx, ty = c.nx // p, c.ny // p
        self.embed = PatchEmbed(c.in_channels + 2, c.width, p)
        self.layers = nn.ModuleList(
            FourierAttentionLayer(c.width, c.heads, c.modes, tx, ty) for _ in range(c.depth)
        )
        self.unpatch = nn.ConvTranspose2d(c.width, c.width, p, stride=p)
        self.out = nn.Conv2d(c.width, c.channels, 1)

    def core(self, x):
        z = self.embed(x)
        for layer in self.layers:
            z = layer(z)
        return self.out(F.gelu(self.unpatch(z)))
