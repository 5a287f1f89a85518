"""Capture per-layer attention activations from an encoder and export them
as quantized exchange files.

Forward hooks grab the attention input, the Q/K/V projection outputs, and
the attention output projection for the requested layers; pre-softmax
logit scores are recomputed from the hooked Q and K (encoder self-attention
modules do not expose them as a module output; without an attention mask
the recomputation is bit-identical to the internal value).

Each tensor is symmetrically quantized per tensor to the requested bit
width; the FP scale goes to a JSON sidecar so downstream comparisons can
dequantize, while the exported files themselves are pure integers.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
import torch

from .exchange import write_exchange

VALID_TAGS = ("input", "q", "k", "v", "logits", "output")


class UnsupportedArchitectureError(RuntimeError):
    """The model does not expose per-head Q/K/V projections."""


@dataclass
class ExportManifest:
    model: str | torch.nn.Module
    out_dir: str
    layers: tuple[int, ...] = (0,)
    tags: tuple[str, ...] = VALID_TAGS
    ibp: int = 8

    def __post_init__(self):
        bad = set(self.tags) - set(VALID_TAGS)
        if bad:
            raise ValueError(f"unknown tags {sorted(bad)}; valid: {VALID_TAGS}")
        if not 2 <= self.ibp <= 16:
            raise ValueError(f"ibp {self.ibp} outside [2, 16]")


def _resolve_model(model: str | torch.nn.Module) -> torch.nn.Module:
    if isinstance(model, torch.nn.Module):
        return model
    from transformers import AutoModel

    return AutoModel.from_pretrained(model)


def _encoder_layers(model: torch.nn.Module):
    for path in ("encoder.layer", "encoder.layers", "layers"):
        node = model
        ok = True
        for part in path.split("."):
            if not hasattr(node, part):
                ok = False
                break
            node = getattr(node, part)
        if ok:
            return list(node)
    raise UnsupportedArchitectureError(
        f"{type(model).__name__} has no encoder layer list"
    )


def _attention_parts(layer):
    attn = getattr(layer, "attention", None)
    self_attn = getattr(attn, "self", None) if attn is not None else None
    out_proj = getattr(getattr(attn, "output", None), "dense", None)
    if self_attn is None or out_proj is None:
        raise UnsupportedArchitectureError(
            "layer does not expose attention.self / attention.output.dense"
        )
    for name in ("query", "key", "value"):
        if not hasattr(self_attn, name):
            raise UnsupportedArchitectureError(
                f"self-attention block lacks a {name} projection"
            )
    return self_attn, out_proj


def quantize_symmetric(x: np.ndarray, bits: int) -> tuple[np.ndarray, float]:
    """Per-tensor symmetric quantization; returns (ints, scale).

    scale maps one integer step back to real units; an all-zero tensor
    gets scale 1.0 by convention.
    """
    qmax = (1 << (bits - 1)) - 1
    peak = float(np.abs(x).max()) if x.size else 0.0
    if peak == 0.0:
        return np.zeros_like(x, dtype=np.int64), 1.0
    scale = peak / qmax
    ints = np.clip(np.rint(x / scale), -qmax, qmax).astype(np.int64)
    return ints, scale


def _num_heads(self_attn) -> int:
    for name in ("num_attention_heads", "num_heads"):
        if hasattr(self_attn, name):
            return int(getattr(self_attn, name))
    raise UnsupportedArchitectureError("cannot determine head count")


def export_activations(manifest: ExportManifest, sample_inputs) -> list[str]:
    """Run the model on `sample_inputs` and write one exchange file (plus a
    scale sidecar) per (tag, layer).  Returns the written file names.

    sample_inputs is the dict of tensors the model's forward expects
    (e.g. input_ids / attention_mask).
    """
    model = _resolve_model(manifest.model)
    model.eval()
    layers = _encoder_layers(model)
    for idx in manifest.layers:
        if not 0 <= idx < len(layers):
            raise ValueError(f"layer {idx} out of range (model has {len(layers)})")

    captured: dict[tuple[str, int], torch.Tensor] = {}
    handles = []
    try:
        for idx in manifest.layers:
            self_attn, out_proj = _attention_parts(layers[idx])

            def grab(tag, layer_idx):
                def hook(_module, _inputs, output):
                    captured[(tag, layer_idx)] = output.detach()

                return hook

            def grab_input(layer_idx):
                def hook(_module, inputs):
                    captured[("input", layer_idx)] = inputs[0].detach()

                return hook

            handles.append(self_attn.register_forward_pre_hook(grab_input(idx)))
            handles.append(self_attn.query.register_forward_hook(grab("q", idx)))
            handles.append(self_attn.key.register_forward_hook(grab("k", idx)))
            handles.append(self_attn.value.register_forward_hook(grab("v", idx)))
            handles.append(out_proj.register_forward_hook(grab("output", idx)))
        with torch.no_grad():
            model(**sample_inputs)
    finally:
        for h in handles:
            h.remove()

    written = []
    os.makedirs(manifest.out_dir, exist_ok=True)
    for idx in manifest.layers:
        self_attn, _ = _attention_parts(layers[idx])
        heads = _num_heads(self_attn)
        if "logits" in manifest.tags:
            q = captured[("q", idx)]
            k = captured[("k", idx)]
            b, n, d = q.shape
            d_k = d // heads
            qh = q.view(b, n, heads, d_k).transpose(1, 2)
            kh = k.view(b, n, heads, d_k).transpose(1, 2)
            scores = qh @ kh.transpose(-1, -2) / math.sqrt(d_k)
            captured[("logits", idx)] = scores
        for tag in manifest.tags:
            tensor = captured[(tag, idx)].cpu().numpy().astype(np.float64)
            ints, scale = quantize_symmetric(tensor, manifest.ibp)
            dtype = "i8" if manifest.ibp <= 8 else "i16"
            stem = f"{tag}_layer{idx}"
            write_exchange(ints, dtype, os.path.join(manifest.out_dir, f"{stem}.tensor"))
            sidecar = {
                "tag": tag,
                "layer": idx,
                "scale": scale,
                "zero_point": 0,
            }
            with open(os.path.join(manifest.out_dir, f"{stem}.scale.json"), "w") as f:
                json.dump(sidecar, f)
            written.append(f"{stem}.tensor")
    return written
