import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

# Channel positions of nonnegative conserved quantities (rho, E).
NONNEG_CHANNELS = (0, 3)


class OperatorConfigError(ValueError):
    pass


def retained_modes(n_x: int, n_y: int, modes: int):
    """Index sets of the retained low-frequency block of an ``rfft2`` spectrum.

    Rows keep signed wavenumbers ``-modes..modes`` (deduplicated modulo
    ``n_x``), columns keep ``0..modes``.
    """
    if modes < 1 or modes > n_x // 2 or modes > n_y // 2:
        raise OperatorConfigError(f"modes={modes} exceeds Nyquist for a {n_x}x{n_y} grid")
    kx = sorted({k % n_x for k in range(-modes, modes + 1)})
    ky = list(range(0, modes + 1))
    return kx, ky


def signed(idx, n):
    idx = np.asarray(idx)
    return np.where(idx > n // 2, idx - n, idx)


def radial_mask(n_x: int, kx, ky, modes: int) -> np.ndarray:
    """True where the mode's rounded radial shell is within ``modes``."""
    sx = signed(kx, n_x)[:, None]
    sy = np.asarray(ky)[None, :]
    return np.rint(np.sqrt(sx**2 + sy**2)) <= modes


def spectral_conv(x, weights, modes: int, mask=None):
    """FFT -> per-mode complex channel mixing on the retained block -> inverse FFT.

    x: (B, C_in, nx, ny) real. weights: (C_in, C_out, n_kx, n_ky) complex,
    ordered as ``retained_modes``.  ``mask`` (n_kx, n_ky) optionally zeroes
    part of the block.
    """
    n_x, n_y = x.shape[-2:]
    kx, ky = retained_modes(n_x, n_y, modes)
    if weights.shape[-2:] != (len(kx), len(ky)):
        raise OperatorConfigError(f"weights cover {tuple(weights.shape[-2:])} modes, expected {(len(kx), len(ky))}")
    x_ft = torch.fft.rfft2(x)
    kx_t = torch.as_tensor(kx)
    block = x_ft[..., kx_t, :][..., : len(ky)]
    mixed = torch.einsum("bixy,ioxy->boxy", block, weights)
    if mask is not None:
        mixed = mixed * mask
    out_ft = torch.zeros(
        x.shape[0], weights.shape[1], n_x, n_y // 2 + 1, dtype=x_ft.dtype, device=x.device
    )
    out_ft[:, :, kx_t, : len(ky)] = mixed
    return torch.fft.irfft2(out_ft, s=(n_x, n_y))


class SpectralConv2d(nn.Module):
    """Learned spectral convolution; weights stored as real pairs for portability."""

    def __init__(self, in_ch, out_ch, modes, n_x, n_y, mask="square"):
        super().__init__()
        kx, ky = retained_modes(n_x, n_y, modes)
        self.modes = modes
        scale = 1.0 / (in_ch * out_ch)
        self.weight = nn.Parameter(scale * torch.rand(in_ch, out_ch, len(kx), len(ky), 2))
        if mask == "radial":
            self.register_buffer("mask", torch.from_numpy(radial_mask(n_x, kx, ky, modes)), persistent=False)
        elif mask == "square":
            self.mask = None
        else:
            raise OperatorConfigError(f"unknown mode mask {mask!r}")

    def forward(self, x):
        w = torch.view_as_complex(self.weight)
        return spectral_conv(x, w, self.modes, self.mask)


def internal_normalize(x, scale=None, shift=None, eps=1e-5):
    """Standardise each channel of ``(B, C, nx, ny)`` over space, then apply the affine map.

    Returns ``(z, mean, std)``; the statistics let callers map outputs back
    to the input's scale.
    """
    mean = x.mean(dim=(-2, -1), keepdim=True)
    std = torch.sqrt(x.var(dim=(-2, -1), keepdim=True, unbiased=False) + eps)
    z = (x - mean) / std
    if scale is not None:
        z = z * scale[:, None, None]
    if shift is not None:
        z = z + shift[:, None, None]
    return z, mean, std


class InternalNorm(nn.Module):
    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.scale = nn.Parameter(torch.ones(channels))
        self.shift = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        return internal_normalize(x, self.scale, self.shift, self.eps)


def clip_nonnegative(raw, floor=1e-8):
    """Clamp rho and E channels of ``(..., 4, nx, ny)`` to ``floor``; momentum untouched."""
    chans = list(torch.unbind(raw, dim=-3))
    for i in NONNEG_CHANNELS:
        chans[i] = torch.clamp(chans[i], min=floor)
    return torch.stack(chans, dim=-3)


class PointwiseMLP(nn.Module):
    def __init__(self, in_ch, hidden, out_ch):
        super().__init__()
        self.fc1 = nn.Conv2d(in_ch, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, out_ch, 1)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class PatchEmbed(nn.Module):
    """Non-overlapping ``patch x patch`` tiles embedded as tokens."""

    def __init__(self, in_ch, embed_dim, patch):
        super().__init__()
        self.patch = patch
        self.proj = nn.Conv2d(in_ch, embed_dim, patch, stride=patch)

    def forward(self, x):
        return self.proj(x)

    def decode_tied(self, tokens):
        """Linear decode sharing the encoder kernel (transpose), bias excluded."""
        return F.conv_transpose2d(tokens, self.proj.weight, stride=self.patch)
