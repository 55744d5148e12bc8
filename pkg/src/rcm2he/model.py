"""Network assembly: two channel generators, three critics, RGB composition.

The generator is an encoder/decoder U-Net (4x4 stride-2 convolutions down,
transposed convolutions with skip connections up, tanh output). The critics
are PatchGAN-style fully convolutional networks; by default they reduce
their patch logit map to a single probability. The RGB composition layer
holds six trainable scalars and maps the two channel images to color:

    rgb[c] = 1 - i_h * sigmoid(w_h[c]) - i_e * sigmoid(w_e[c])

Convolution biases follow the "bias only where no normalization follows"
rule; weights are initialized N(0, 0.02) as is usual for this family.
"""

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int = 1
    out_channels: int = 1
    levels: int = 8
    base_width: int = 64
    dropout_levels: tuple = None   # decoder levels with dropout; default: 3 innermost
    dropout_rate: float = 0.5
    norm: str = "batch"            # batch | instance | none

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.dropout_levels is None:
            innermost = tuple(range(self.levels - 1, max(self.levels - 4, 0), -1))
            object.__setattr__(self, "dropout_levels", innermost)

    def widths(self) -> list:
        return [min(self.base_width * 2 ** k, self.base_width * 8)
                for k in range(self.levels)]


@dataclass(frozen=True)
class DiscriminatorSpec:
    in_channels: int = 2           # condition channels + candidate channels
    base_width: int = 64
    conditional: bool = True
    patch_output: bool = False     # True: per-patch probability map

    def widths(self) -> list:
        return [self.base_width, self.base_width * 2, self.base_width * 4,
                self.base_width * 8]


def _norm_layer(kind: str, channels: int):
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    if kind == "instance":
        return nn.InstanceNorm2d(channels, affine=True)
    if kind == "none":
        return None
    raise ValueError(f"unknown norm kind: {kind}")


def init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.InstanceNorm2d)) and m.weight is not None:
            nn.init.normal_(m.weight, 1.0, 0.02)
            nn.init.zeros_(m.bias)


class UnetGenerator(nn.Module):
    """U-Net translator: stride-2 4x4 encoder, mirrored decoder with skips."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        w = spec.widths()
        L = spec.levels

        downs = [self._down(spec.in_channels, w[0], norm=False)]
        for k in range(1, L - 1):
            downs.append(self._down(w[k - 1], w[k], norm=True))
        if L > 1:
            downs.append(self._down(w[L - 2], w[L - 1], norm=False))
        self.downs = nn.ModuleList(downs)

        ups = []
        if L > 1:
            ups.append(self._up(w[L - 1], w[L - 2], norm=True,
                                dropout=(L - 1) in spec.dropout_levels))
            for k in range(L - 2, 0, -1):
                ups.append(self._up(2 * w[k], w[k - 1], norm=True,
                                    dropout=k in spec.dropout_levels))
        final_in = 2 * w[0] if L > 1 else w[0]
        ups.append(nn.Sequential(nn.ConvTranspose2d(final_in, spec.out_channels, 4, 2, 1),
                                 nn.Tanh()))
        self.ups = nn.ModuleList(ups)

    def _down(self, cin, cout, norm):
        norm_mod = _norm_layer(self.spec.norm, cout) if norm else None
        layers = [nn.Conv2d(cin, cout, 4, 2, 1, bias=norm_mod is None)]
        if norm_mod is not None:
            layers.append(norm_mod)
        layers.append(nn.LeakyReLU(0.2, inplace=True))
        return nn.Sequential(*layers)

    def _up(self, cin, cout, norm, dropout):
        norm_mod = _norm_layer(self.spec.norm, cout) if norm else None
        layers = [nn.ConvTranspose2d(cin, cout, 4, 2, 1, bias=norm_mod is None)]
        if norm_mod is not None:
            layers.append(norm_mod)
        if dropout:
            layers.append(nn.Dropout(self.spec.dropout_rate))
        layers.append(nn.ReLU(inplace=True))
        return nn.Sequential(*layers)

    def forward(self, x):
        h, w = x.shape[-2:]
        step = 2 ** self.spec.levels
        if h % step or w % step:
            raise ValueError(f"input dims {(h, w)} not divisible by 2^levels = {step}")
        skips = []
        for down in self.downs:
            x = down(x)
            skips.append(x)
        x = self.ups[0](skips[-1]) if len(self.ups) > 1 else None
        for i, up in enumerate(self.ups[1:-1], start=1):
            x = up(torch.cat([x, skips[-1 - i]], dim=1))
        if len(self.ups) > 1:
            x = self.ups[-1](torch.cat([x, skips[0]], dim=1))
        else:
            x = self.ups[-1](skips[-1])
        return x


class PatchDiscriminator(nn.Module):
    """Five-layer fully convolutional critic.

    Three stride-2 4x4 convolutions, one stride-1 4x4 convolution, and a
    final 4x4 convolution to one logit channel. In the default single-value
    mode the logit map is averaged and passed through a sigmoid, giving one
    probability strictly inside (0, 1); patch mode returns the per-patch
    probability map instead. Inputs below the 8 px stride footprint are
    rejected; small maps inside the stride-1 tail are replicate-padded so
    probe-sized inputs (8x8) still produce a value.
    """

    MIN_INPUT = 8

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        w = spec.widths()
        self.strided = nn.Sequential(
            nn.Conv2d(spec.in_channels, w[0], 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w[0], w[1], 4, 2, 1, bias=False), nn.BatchNorm2d(w[1]),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w[1], w[2], 4, 2, 1, bias=False), nn.BatchNorm2d(w[2]),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.tail1 = nn.Sequential(
            nn.Conv2d(w[2], w[3], 4, 1, 1, bias=False), nn.BatchNorm2d(w[3]),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.tail2 = nn.Conv2d(w[3], 1, 4, 1, 1)

    @staticmethod
    def _pad_min2(x):
        h, w = x.shape[-2:]
        if h >= 2 and w >= 2:
            return x
        return nn.functional.pad(x, (0, max(0, 2 - w), 0, max(0, 2 - h)), mode="replicate")

    def forward(self, condition, candidate=None):
        if self.spec.conditional:
            if candidate is None:
                raise ValueError("conditional critic needs (condition, candidate)")
            x = torch.cat([condition, candidate], dim=1)
        else:
            x = condition if candidate is None else candidate
        if min(x.shape[-2:]) < self.MIN_INPUT:
            raise ValueError(f"input {tuple(x.shape[-2:])} smaller than the critic's "
                             f"stride footprint (needs >= {self.MIN_INPUT} px)")
        x = self.strided(x)
        x = self.tail1(self._pad_min2(x))
        logits = self.tail2(self._pad_min2(x))
        # |logit| <= 15 keeps sigmoid strictly inside (0, 1) in float32
        logits = logits.clamp(-15.0, 15.0)
        if self.spec.patch_output:
            return torch.sigmoid(logits)
        return torch.sigmoid(logits.mean(dim=(1, 2, 3)))


class RgbConcat(nn.Module):
    """Trainable color composition of the H and E channel images.

    Weights start at -2 (effective absorption sigmoid(-2) ~ 0.12), so the
    untrained composite is nearly unstained white; colorization is learned
    by the phases that train this layer rather than inherited from the
    initialization.
    """

    INIT_WEIGHT = -2.0

    def __init__(self):
        super().__init__()
        self.weights_h = nn.Parameter(torch.full((3,), self.INIT_WEIGHT))
        self.weights_e = nn.Parameter(torch.full((3,), self.INIT_WEIGHT))

    def forward(self, i_h, i_e):
        if i_h.shape[-2:] != i_e.shape[-2:]:
            raise ValueError(f"channel dims differ: {i_h.shape} vs {i_e.shape}")
        w_h = torch.sigmoid(self.weights_h).view(1, 3, 1, 1)
        w_e = torch.sigmoid(self.weights_e).view(1, 3, 1, 1)
        return 1.0 - i_h * w_h - i_e * w_e


def rgb_concat_forward(i_h, i_e, layer: RgbConcat):
    """Compose channel images (values in [0,1]) into raw RGB in (-1, 1].

    Accepts (H, W), (B, 1, H, W) or (B, 3, H, W) inputs; output is not
    clamped, losses see raw values.
    """
    squeeze = False
    if not torch.is_tensor(i_h):
        i_h = torch.as_tensor(i_h, dtype=torch.float64)
        i_e = torch.as_tensor(i_e, dtype=torch.float64)
    if i_h.dim() == 2:
        i_h = i_h[None, None]
        i_e = i_e[None, None]
        squeeze = True
    if i_h.shape[-2:] != i_e.shape[-2:]:
        raise ValueError(f"channel dims differ: {i_h.shape} vs {i_e.shape}")
    w_h = torch.sigmoid(layer.weights_h.to(i_h.dtype)).view(1, 3, 1, 1)
    w_e = torch.sigmoid(layer.weights_e.to(i_h.dtype)).view(1, 3, 1, 1)
    out = 1.0 - i_h * w_h - i_e * w_e
    return out[0].permute(1, 2, 0) if squeeze else out


class NetworkAssembly:
    """The dual-branch assembly: G_H, G_E, color layer, three critics."""

    def __init__(self, gen_spec: GeneratorSpec, disc_spec: DiscriminatorSpec, seed: int = 0):
        torch.manual_seed(seed)
        self.gen_spec = gen_spec
        self.disc_spec = disc_spec
        self.g_h = UnetGenerator(gen_spec)
        self.g_e = UnetGenerator(gen_spec)
        self.concat = RgbConcat()
        cond = gen_spec.in_channels if disc_spec.conditional else 0
        self.d_h = PatchDiscriminator(_with_channels(disc_spec, cond + gen_spec.out_channels))
        self.d_e = PatchDiscriminator(_with_channels(disc_spec, cond + gen_spec.out_channels))
        self.d_out = PatchDiscriminator(_with_channels(disc_spec, cond + 3))
        for m in self.modules().values():
            init_weights(m)

    def modules(self) -> dict:
        return {"g_h": self.g_h, "g_e": self.g_e, "concat": self.concat,
                "d_h": self.d_h, "d_e": self.d_e, "d_out": self.d_out}

    def generators(self):
        return [self.g_h, self.g_e, self.concat]

    def forward_full(self, x):
        """x -> (i_h, i_e, i_rgb); channels remapped to [0,1], rgb raw."""
        i_h = (self.g_h(x) + 1.0) * 0.5
        i_e = (self.g_e(x) + 1.0) * 0.5
        return i_h, i_e, self.concat(i_h, i_e)

    def predict_rgb(self, x):
        return self.forward_full(x)[2]

    def train(self, mode=True):
        for m in self.modules().values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def to(self, *args, **kwargs):
        for m in self.modules().values():
            m.to(*args, **kwargs)
        return self

    def double(self):
        return self.to(torch.float64)

    def state_dicts(self) -> dict:
        return {name: m.state_dict() for name, m in self.modules().items()}

    def load_state_dicts(self, states: dict) -> None:
        for name, m in self.modules().items():
            m.load_state_dict(states[name])


class SingleAssembly:
    """Single-branch variant: one generator straight to RGB, one critic."""

    def __init__(self, gen_spec: GeneratorSpec, disc_spec: DiscriminatorSpec, seed: int = 0):
        torch.manual_seed(seed)
        if gen_spec.out_channels != 3:
            gen_spec = _replace_out(gen_spec, 3)
        self.gen_spec = gen_spec
        self.disc_spec = disc_spec
        self.gen = UnetGenerator(gen_spec)
        cond = gen_spec.in_channels if disc_spec.conditional else 0
        self.disc = PatchDiscriminator(_with_channels(disc_spec, cond + 3))
        for m in self.modules().values():
            init_weights(m)

    def modules(self) -> dict:
        return {"gen": self.gen, "disc": self.disc}

    def predict_rgb(self, x):
        return (self.gen(x) + 1.0) * 0.5

    def train(self, mode=True):
        for m in self.modules().values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def to(self, *args, **kwargs):
        for m in self.modules().values():
            m.to(*args, **kwargs)
        return self

    def double(self):
        return self.to(torch.float64)

    def state_dicts(self) -> dict:
        return {name: m.state_dict() for name, m in self.modules().items()}

    def load_state_dicts(self, states: dict) -> None:
        for name, m in self.modules().items():
            m.load_state_dict(states[name])


def _with_channels(spec: DiscriminatorSpec, channels: int) -> DiscriminatorSpec:
    return DiscriminatorSpec(in_channels=channels, base_width=spec.base_width,
                             conditional=spec.conditional, patch_output=spec.patch_output)


def _replace_out(spec: GeneratorSpec, out_channels: int) -> GeneratorSpec:
    kw = asdict(spec)
    kw["out_channels"] = out_channels
    kw["dropout_levels"] = tuple(kw["dropout_levels"])
    return GeneratorSpec(**kw)


def build_generator(spec: GeneratorSpec) -> UnetGenerator:
    gen = UnetGenerator(spec)
    init_weights(gen)
    return gen


def build_discriminator(spec: DiscriminatorSpec) -> PatchDiscriminator:
    disc = PatchDiscriminator(spec)
    init_weights(disc)
    return disc


# --- parameter and complexity audit ------------------------------------------

@dataclass
class ParamReport:
    components: dict = field(default_factory=dict)
    generator_side_total: int = 0
    total: int = 0

    def lines(self):
        out = [f"{name:<8} {count:>12,}" for name, count in self.components.items()]
        out.append(f"{'G side':<8} {self.generator_side_total:>12,}")
        out.append(f"{'total':<8} {self.total:>12,}")
        return out


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def audit_params(assembly) -> ParamReport:
    """Exact per-component parameter counts for either assembly kind."""
    report = ParamReport()
    for name, m in assembly.modules().items():
        report.components[name] = count_params(m)
    c = report.components
    if "g_h" in c:
        report.generator_side_total = c["g_h"] + c["g_e"] + c["concat"]
    else:
        report.generator_side_total = c["gen"]
    report.total = sum(c.values())
    return report


def _norm_params(kind: str, channels: int) -> int:
    return 0 if kind == "none" else 2 * channels


def generator_param_count(spec: GeneratorSpec) -> int:
    """Closed-form parameter count of the U-Net generator (k=4 kernels)."""
    w = spec.widths()
    L = spec.levels
    k2 = 16
    if L == 1:
        return (k2 * spec.in_channels * w[0] + w[0]
                + k2 * w[0] * spec.out_channels + spec.out_channels)
    total = k2 * spec.in_channels * w[0] + w[0]                     # first down, bias
    for k in range(1, L - 1):                                       # normalized downs
        total += k2 * w[k - 1] * w[k]
        total += w[k] if spec.norm == "none" else _norm_params(spec.norm, w[k])
    total += k2 * w[L - 2] * w[L - 1] + w[L - 1]                    # innermost, bias
    total += k2 * w[L - 1] * w[L - 2]                               # first up
    total += w[L - 2] if spec.norm == "none" else _norm_params(spec.norm, w[L - 2])
    for k in range(L - 2, 0, -1):                                   # skip-fed ups
        total += k2 * 2 * w[k] * w[k - 1]
        total += w[k - 1] if spec.norm == "none" else _norm_params(spec.norm, w[k - 1])
    total += k2 * 2 * w[0] * spec.out_channels + spec.out_channels  # final, bias
    return total


def discriminator_param_count(spec: DiscriminatorSpec) -> int:
    """Closed-form parameter count of the five-layer critic."""
    w = spec.widths()
    k2 = 16
    total = k2 * spec.in_channels * w[0] + w[0]
    total += k2 * w[0] * w[1] + 2 * w[1]
    total += k2 * w[1] * w[2] + 2 * w[2]
    total += k2 * w[2] * w[3] + 2 * w[3]
    total += k2 * w[3] * 1 + 1
    return total


def generator_macs(spec: GeneratorSpec, input_hw: int = 256) -> int:
    """Analytic multiply-accumulate count of one generator forward pass."""
    w = spec.widths()
    L = spec.levels
    macs = 0
    sizes = [input_hw // 2 ** (k + 1) for k in range(L)]
    chans_in = [spec.in_channels] + w[:-1]
    for cin, cout, s in zip(chans_in, w, sizes):
        macs += 16 * cin * cout * s * s
    up_in = [w[L - 1]] + [2 * w[k] for k in range(L - 2, -1, -1)]
    up_out = w[L - 2::-1] + [spec.out_channels] if L > 1 else [spec.out_channels]
    up_sizes = sizes[L - 2::-1] + [input_hw]
    for cin, cout, s in zip(up_in, up_out, up_sizes):
        macs += 16 * cin * cout * s * s
    return macs
