"""CLI: export encoder attention activations for the PiM simulator."""

from __future__ import annotations

import argparse
import json
import sys

from .exporter import ExportManifest, export_activations


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="activation-export",
        description="Dump per-layer attention activations as exchange files",
    )
    parser.add_argument("--model", required=True, help="HF model id or local path")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--layers", default="0", help="comma-separated indices")
    parser.add_argument(
        "--tags", default="input,q,k,v,logits,output", help="comma-separated tags"
    )
    parser.add_argument("--ibp", type=int, default=8)
    parser.add_argument("--seq-len", type=int, default=32)
    parser.add_argument("--batch", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    import torch

    try:
        manifest = ExportManifest(
            model=args.model,
            out_dir=args.out,
            layers=tuple(int(s) for s in args.layers.split(",")),
            tags=tuple(args.tags.split(",")),
            ibp=args.ibp,
        )
        torch.manual_seed(args.seed)
        from transformers import AutoConfig

        vocab = int(getattr(AutoConfig.from_pretrained(args.model), "vocab_size", 1000))
        gen = torch.Generator().manual_seed(args.seed)
        inputs = {
            "input_ids": torch.randint(
                0, vocab, (args.batch, args.seq_len), generator=gen
            )
        }
        files = export_activations(manifest, inputs)
    except Exception as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}))
        return 2
    print(json.dumps({"written": files, "out_dir": args.out}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
