"""ResNet-18 encoder with a pyramid-pooling decoder and U-Net style skips.

The encoder follows the ResNet-18 layout (7x7 stem, four stages of two basic
blocks each) without the classification head. The deepest feature map is
pooled at four scales, fused, and then upsampled stage by stage, concatenating
the matching encoder features on the way back to full resolution.
"""
import torch
import torch.nn as nn
import torch.nn.functional as F

PYRAMID_BINS = (1, 2, 3, 6)


def conv3x3(in_chs, out_chs, stride=1):
    return nn.Conv2d(in_chs, out_chs, kernel_size=3, stride=stride, padding=1, bias=False)


def conv_bn_relu(in_chs, out_chs):
    return nn.Sequential(conv3x3(in_chs, out_chs), nn.BatchNorm2d(out_chs), nn.ReLU(inplace=True))


class BasicBlock(nn.Module):
    def __init__(self, in_chs, out_chs, stride=1):
        super().__init__()
        self.conv1 = conv3x3(in_chs, out_chs, stride)
        self.bn1 = nn.BatchNorm2d(out_chs)
        self.conv2 = conv3x3(out_chs, out_chs)
        self.bn2 = nn.BatchNorm2d(out_chs)
        self.downsample = None
        if stride != 1 or in_chs != out_chs:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_chs, out_chs, kernel_size=1, stride=stride, bias=False),
                nn.BatchNorm2d(out_chs),
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


class ResNet18Encoder(nn.Module):
    """Returns features at strides 2, 4, 8, 16 and 32."""

    def __init__(self, in_channels=3, width=64):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, width, kernel_size=7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
        )
        self.pool = nn.MaxPool2d(kernel_size=3, stride=2, padding=1)
        widths = [width, width * 2, width * 4, width * 8]
        stages = []
        in_chs = width
        for i, w in enumerate(widths):
            stride = 1 if i == 0 else 2
            stages.append(nn.Sequential(BasicBlock(in_chs, w, stride), BasicBlock(w, w)))
            in_chs = w
        self.stages = nn.ModuleList(stages)
        self.channels = [width] + widths

    def forward(self, x):
        feats = [self.stem(x)]
        x = self.pool(feats[0])
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class PyramidPooling(nn.Module):
    def __init__(self, in_chs, out_chs, bins=PYRAMID_BINS):
        super().__init__()
        branch_chs = max(in_chs // len(bins), 1)
        # no batch norm in the branches: the 1x1 bin has a single value per channel
        self.branches = nn.ModuleList(
            nn.Sequential(nn.AdaptiveAvgPool2d(b), nn.Conv2d(in_chs, branch_chs, 1), nn.ReLU(inplace=True))
            for b in bins
        )
        self.fuse = conv_bn_relu(in_chs + branch_chs * len(bins), out_chs)

    def forward(self, x):
        size = x.shape[-2:]
        pooled = [
            F.interpolate(branch(x), size=size, mode="bilinear", align_corners=False)
            for branch in self.branches
        ]
        return self.fuse(torch.cat([x, *pooled], dim=1))


class UpBlock(nn.Module):
    def __init__(self, in_chs, skip_chs, out_chs):
        super().__init__()
        self.conv = conv_bn_relu(in_chs + skip_chs, out_chs)

    def forward(self, x, skip):
        x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
        return self.conv(torch.cat([x, skip], dim=1))


class BurnSegNet(nn.Module):
    """Maps ``(n, 3, H, W)`` reflectances to ``(n, classes, H, W)`` logits."""

    def __init__(self, in_channels=3, classes=2, width=64):
        super().__init__()
        self.encoder = ResNet18Encoder(in_channels, width)
        c_stem, c1, c2, c3, c4 = self.encoder.channels
        self.ppm = PyramidPooling(c4, c3)
        self.up3 = UpBlock(c3, c3, c2)
        self.up2 = UpBlock(c2, c2, c1)
        self.up1 = UpBlock(c1, c1, c1)
        self.up0 = UpBlock(c1, c_stem, max(width // 2, 1))
        head_chs = max(width // 2, 1)
        self.head = nn.Sequential(conv_bn_relu(head_chs, head_chs), nn.Conv2d(head_chs, classes, 1))

    def forward(self, x):
        size = x.shape[-2:]
        stem, f1, f2, f3, f4 = self.encoder(x)
        d = self.ppm(f4)
        d = self.up3(d, f3)
        d = self.up2(d, f2)
        d = self.up1(d, f1)
        d = self.up0(d, stem)
        d = F.interpolate(d, size=size, mode="bilinear", align_corners=False)
        return self.head(d)


def segmentation_loss(logits, target, kind="combined", smooth=1.0):
    """Cross-entropy, soft Dice on the burned class, or their equal-weight sum."""
    target = target.long()
    terms = []
    if kind in ("cross-entropy", "combined"):
        terms.append(F.cross_entropy(logits, target))
    if kind in ("dice", "combined"):
        prob = torch.softmax(logits, dim=1)[:, 1]
        t = target.to(prob.dtype)
        inter = (prob * t).sum()
        terms.append(1 - (2 * inter + smooth) / (prob.sum() + t.sum() + smooth))
    if not terms:
        raise ValueError(f"unknown loss {kind!r}")
    return sum(terms)
