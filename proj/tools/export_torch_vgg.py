#!/usr/bin/env python3
"""Export a small torchvision VGG to the SaliencyTune checkpoint format.

Writes the checkpoint and a JSON file of reference logits and Grad-CAM maps
computed by torch autograd, used by the adapter tests.

    python3 tools/export_torch_vgg.py tests/fixtures
"""
import json
import struct
import sys
from pathlib import Path

import torch
from torch import nn
from torchvision.models.vgg import VGG, make_layers

MAGIC = b"STCKPT\x00\x01"
CFG = [4, "M", 8, "M"]
INPUT = (3, 28, 28)
HIDDEN = 16
CLASSES = 3
MEAN = [0.485, 0.456, 0.406]
STD = [0.229, 0.224, 0.225]


def build(seed):
    torch.manual_seed(seed)
    model = VGG(make_layers(CFG), num_classes=CLASSES, init_weights=True)
    flat = 8 * 7 * 7
    model.classifier = nn.Sequential(
        nn.Linear(flat, HIDDEN), nn.ReLU(True), nn.Dropout(), nn.Linear(HIDDEN, CLASSES)
    )
    for m in model.classifier:
        if isinstance(m, nn.Linear):
            nn.init.normal_(m.weight, 0, 0.1)
            nn.init.normal_(m.bias, 0, 0.1)
    for m in model.features:
        if isinstance(m, nn.Conv2d):
            nn.init.normal_(m.bias, 0, 0.1)
    return model.double().eval()


def architecture():
    layers = []
    channels = INPUT[0]
    for v in CFG:
        if v == "M":
            layers.append({"type": "maxpool2d", "window": 2})
        else:
            layers.append({"type": "conv2d", "in": channels, "out": v, "kernel": 3, "padding": 1})
            layers.append({"type": "relu"})
            channels = v
    layers.append({"type": "flatten"})
    layers.append({"type": "linear", "in": 8 * 7 * 7, "out": HIDDEN})
    layers.append({"type": "relu"})
    layers.append({"type": "linear", "in": HIDDEN, "out": CLASSES})
    return {
        "input_shape": list(INPUT),
        "layers": layers,
        "normalization": {"mean": MEAN, "std": STD},
    }


def parameter_modules(model):
    """(our layer index, torch module) for every layer with parameters."""
    out = []
    index = 0
    for m in model.features:
        if isinstance(m, (nn.Conv2d, nn.ReLU, nn.MaxPool2d)):
            if isinstance(m, nn.Conv2d):
                out.append((index, m))
            index += 1
    index += 1  # flatten
    for m in model.classifier:
        if isinstance(m, nn.Dropout):
            continue
        if isinstance(m, nn.Linear):
            out.append((index, m))
        index += 1
    return out


def write_checkpoint(model, path, explanation_layer):
    blobs, data, offset = [], [], 0
    for index, m in parameter_modules(model):
        for name, tensor in (("weight", m.weight), ("bias", m.bias)):
            values = tensor.detach().reshape(-1).tolist()
            blobs.append({"name": f"layers.{index}.{name}", "shape": list(tensor.shape),
                          "offset": offset, "count": len(values)})
            data.extend(values)
            offset += len(values)
    header = json.dumps({
        "format_version": 1,
        "architecture": architecture(),
        "explanation_layer_id": explanation_layer,
        "training_step": 0,
        "dtype": "float64-le",
        "blobs": blobs,
    }).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack(f"<{len(data)}d", *data))


def grad_cam(model, x):
    normalized = (x - torch.tensor(MEAN, dtype=x.dtype).view(3, 1, 1)) / torch.tensor(STD, dtype=x.dtype).view(3, 1, 1)
    acts = model.features(normalized.unsqueeze(0))
    acts.retain_grad()
    logits = model.classifier(torch.flatten(model.avgpool(acts), 1))[0]
    c = int(torch.argmax(logits))
    logits[c].backward()
    weights = acts.grad[0].mean(dim=(1, 2))
    cam = torch.relu((weights.view(-1, 1, 1) * acts[0]).sum(0))
    peak = cam.max()
    cam = cam / peak if peak > 0 else cam
    return logits.detach(), c, cam.detach()


def main():
    out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures")
    out_dir.mkdir(parents=True, exist_ok=True)
    model = build(0)
    explanation_layer = 5  # output of the last max-pool, the final conv block
    write_checkpoint(model, out_dir / "tiny_vgg.ckpt", explanation_layer)
    gen = torch.Generator().manual_seed(1)
    cases = []
    for _ in range(4):
        x = torch.rand(INPUT, generator=gen, dtype=torch.float64)
        logits, c, cam = grad_cam(model, x)
        cases.append({
            "input": x.reshape(-1).tolist(),
            "logits": logits.tolist(),
            "predicted_class": c,
            "cam": cam.reshape(-1).tolist(),
        })
    ref = {"explanation_layer_id": explanation_layer, "cam_shape": [7, 7], "cases": cases}
    (out_dir / "tiny_vgg_reference.json").write_text(json.dumps(ref))
    print(f"wrote {out_dir / 'tiny_vgg.ckpt'} and {out_dir / 'tiny_vgg_reference.json'}")


if __name__ == "__main__":
    main()
