"""Global average vs. global max vs. global top-k pooling in the S=3 model."""
from _common import parser, setup

from gacnn.data import generate_synthetic, synth_spec_from_config
from gacnn.experiments import run
from gacnn.training import evaluate


def main():
    args = parser(__doc__).parse_args()
    setup(args)
    print("| pooling | test accuracy | per-head |\n|---|---|---|")
    for name, label in (("gsc_gap", "GAP"), ("gsc_gmp", "GMP"), ("gsc", "GTKP")):
        rec = run(name, args.override, args.cache)
        _, test = generate_synthetic(synth_spec_from_config(rec.config))
        ev = evaluate(rec.model, test)
        heads = ", ".join(f"{a:.3f}" for a in ev.head_accuracies)
        print(f"| {label} | {ev.accuracy:.4f} | {heads} |")


if __name__ == "__main__":
    main()
