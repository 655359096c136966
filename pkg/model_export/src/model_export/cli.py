"""CLI for the backbone exporter."""

from __future__ import annotations

import argparse
import sys

from .export import DEFAULT_TOLERANCE, ExportError, PREPROCESSING, TAP_SLICES, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="model-export",
        description="Export a VGG16 backbone (truncated at a pooling layer) to a "
                    "TorchScript graph plus the backend manifest the feature "
                    "pipeline loads.")
    parser.add_argument("--role", required=True, choices=("foreground", "background"))
    parser.add_argument("--weights", required=True,
                        help="torchvision | file:<state-dict path> | random:<seed>")
    parser.add_argument("--out", required=True, help="output graph path (.pt)")
    parser.add_argument("--tap", default="pool5", choices=sorted(TAP_SLICES))
    parser.add_argument("--preprocessing", default="torchvision",
                        choices=sorted(PREPROCESSING))
    parser.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    args = parser.parse_args(argv)
    try:
        record = export(args.role, args.weights, args.out, tap=args.tap,
                        preprocessing=args.preprocessing, tolerance=args.tolerance)
    except ExportError as e:
        print(f"export error: {e}", file=sys.stderr)
        return 2
    print(f"exported {record.role} backbone ({record.weights_source}, {record.tapped}) "
          f"-> {args.out}")
    print(f"  graph sha256 {record.graph_sha256[:16]}..., "
          f"parity max |diff| {record.parity_max_abs:.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
