"""Conditional radiance field: positional encoding plus the decoder MLP.

The field maps an encoded 3D position and view direction, conditioned on a
shape code and an appearance code, to volume density and RGB color. The
conditioning is strictly split so disentanglement is architectural:

* density = f(encoded position, shape code)
* color   = g(trunk features, encoded direction, appearance code)

The density branch never sees the view direction or the appearance code,
which makes "appearance cannot change geometry" an exact invariant rather
than a training outcome.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn


class DimensionMismatch(ValueError):
    """Raised when latent code dimensions do not match the field config."""


@dataclass(frozen=True)
class LatentCodes:
    """Disentangled object attributes: shape controls geometry, appearance color."""

    shape: Tensor
    appearance: Tensor


@dataclass(frozen=True)
class FieldConfig:
    shape_dim: int = 32
    appearance_dim: int = 32
    pos_frequencies: int = 10
    dir_frequencies: int = 4
    trunk_layers: int = 4
    trunk_width: int = 128


def positional_encoding(p: Tensor, frequencies: int) -> Tensor:
    """Sinusoidal feature lift: (sin(2^k pi p), cos(2^k pi p)) for k < L.

    Output layout is frequency-major: for each k all sines over the input
    dims, then all cosines. Output width is ``2 * L * n`` for n input dims.
    """
    if frequencies < 1:
        raise ValueError("frequency count must be >= 1")
    freqs = (2.0 ** torch.arange(frequencies, dtype=p.dtype, device=p.device)) * math.pi
    angles = p[..., None, :] * freqs[:, None]  # (..., L, n)
    enc = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)  # (..., L, 2n)
    return enc.flatten(-2)


def _seeded_linear(in_dim: int, out_dim: int, generator: torch.Generator) -> nn.Linear:
    # Kaiming-uniform init drawn from an explicit generator so that model
    # construction never touches the global RNG stream.
    layer = nn.Linear(in_dim, out_dim)
    bound = math.sqrt(1.0 / in_dim)
    with torch.no_grad():
        layer.weight.uniform_(-math.sqrt(3.0) * bound, math.sqrt(3.0) * bound, generator=generator)
        layer.bias.uniform_(-bound, bound, generator=generator)
    return layer


class RadianceField(nn.Module):
    """GRAF-style conditional NeRF decoder.

    The shape code is concatenated with the encoded position at the trunk
    input; the appearance code with the encoded direction at the color
    head input. Density uses a softplus activation (non-negative,
    differentiable everywhere), color a sigmoid (componentwise [0, 1]).
    """

    def __init__(self, config: FieldConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        gen = generator if generator is not None else torch.Generator().manual_seed(0)
        pos_dim = 2 * config.pos_frequencies * 3
        dir_dim = 2 * config.dir_frequencies * 3
        widths = [pos_dim + config.shape_dim] + [config.trunk_width] * config.trunk_layers
        self.trunk = nn.ModuleList(
            _seeded_linear(widths[i], widths[i + 1], gen) for i in range(config.trunk_layers)
        )
        self.density_head = _seeded_linear(config.trunk_width, 1, gen)
        self.color_hidden = _seeded_linear(
            config.trunk_width + dir_dim + config.appearance_dim, config.trunk_width, gen
        )
        self.color_head = _seeded_linear(config.trunk_width, 3, gen)

    def forward(
        self,
        x: Tensor,
        d: Tensor,
        shape_code: Tensor,
        appearance_code: Tensor,
    ) -> tuple[Tensor, Tensor]:
        """Evaluate density and color at world points.

        Args:
            x: (..., 3) positions.
            d: (..., 3) unit view directions.
            shape_code: (..., shape_dim), broadcastable against x.
            appearance_code: (..., appearance_dim).

        Returns:
            (density, color) with shapes (...,) and (..., 3).
        """
        cfg = self.config
        if shape_code.shape[-1] != cfg.shape_dim:
            raise DimensionMismatch(
                f"shape code dim {shape_code.shape[-1]} != configured {cfg.shape_dim}"
            )
        if appearance_code.shape[-1] != cfg.appearance_dim:
            raise DimensionMismatch(
                f"appearance code dim {appearance_code.shape[-1]} != configured {cfg.appearance_dim}"
            )
        h = torch.cat(
            [positional_encoding(x, cfg.pos_frequencies), shape_code.expand(*x.shape[:-1], -1)],
            dim=-1,
        )
        for layer in self.trunk:
            h = torch.relu(layer(h))
        density = nn.functional.softplus(self.density_head(h)[..., 0])
        color_in = torch.cat(
            [
                h,
                positional_encoding(d, cfg.dir_frequencies),
                appearance_code.expand(*x.shape[:-1], -1),
            ],
            dim=-1,
        )
        color = torch.sigmoid(self.color_head(torch.relu(self.color_hidden(color_in))))
        return density, color


def field_eval(
    field: RadianceField,
    x: Tensor,
    d: Tensor,
    codes: LatentCodes,
) -> tuple[Tensor, Tensor]:
    """Functional wrapper evaluating the field at a single point or batch."""
    return field(x, d, codes.shape, codes.appearance)
