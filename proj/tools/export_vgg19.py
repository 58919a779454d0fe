"""Export torchvision's ImageNet VGG19 conv weights to the CIRVGG19 format.

    python tools/export_vgg19.py "$CLEAR_IR_CACHE/vgg19_imagenet.bin"
"""
import argparse
import struct

import torch
from torchvision.models import VGG19_Weights, vgg19


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("out")
    args = parser.parse_args()

    model = vgg19(weights=VGG19_Weights.IMAGENET1K_V1).eval()
    convs = [m for m in model.features if isinstance(m, torch.nn.Conv2d)]
    assert len(convs) == 16
    with open(args.out, "wb") as f:
        f.write(b"CIRVGG19")
        f.write(struct.pack("<I", 1))
        for conv in convs:
            f.write(conv.weight.detach().numpy().astype("<f4").tobytes())
            f.write(conv.bias.detach().numpy().astype("<f4").tobytes())


if __name__ == "__main__":
    main()
