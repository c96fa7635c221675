import torch.nn.functional as F
from torch import nn

from .base import OperatorConfig, StepOperator
from .layers import PointwiseMLP, SpectralConv2d


class FNOBlock(nn.Module):
    def __init__(self, width, modes, nx, ny, mask):
        super().__init__()
        self.spectral = SpectralConv2d(width, width, modes, nx, ny, mask)
        self.skip = nn.Conv2d(width, width, 1)
        self.mlp = PointwiseMLP(width, width, width)

    def forward(self, x):
        x = F.gelu(self.spectral(x) + self.skip(x))
        return x + self.mlp(x)


class FNO(StepOperator):
    """Lifting -> spectral blocks with channel MLPs -> spectral head -> linear projection.

    The head is a bare spectral convolution followed by a pointwise linear
    projection, so the raw output contains no wavenumbers outside the
    retained set.
    """

    def __init__(self, config: OperatorConfig):
        super().__init__(config)
        c = config
        self.lift = nn.Conv2d(c.in_channels + 2, c.width, 1)
        self.blocks = nn.ModuleList(
            FNOBlock(c.width, c.modes, c.nx, c.ny, c.mode_mask) for _ in range(c.depth - 1)
        )
        self.head = SpectralConv2d(c.width, c.width, c.modes, c.nx, c.ny, c.mode_mask)
        self.proj = nn.Conv2d(c.width, c.channels, 1)

    def core(self, x):
        x = self.lift(x)
        for block in self.blocks:
            x = block(x)
        return self.proj(self.head(x))

