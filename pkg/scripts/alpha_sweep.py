"""Two-pass accuracy and localization as the clip threshold varies (evaluation only)."""
from _common import parser, setup

from gacnn.data import generate_synthetic, synth_spec_from_config
from gacnn.experiments import ALPHAS, alpha_sweep, localization_ious, run


def main():
    p = parser(__doc__)
    p.add_argument("--alphas", default=",".join(map(str, ALPHAS)))
    args = p.parse_args()
    setup(args)
    rec = run("gsc_oam", args.override, args.cache)
    _, test = generate_synthetic(synth_spec_from_config(rec.config))
    alphas = [float(a) for a in args.alphas.split(",")]
    print("| alpha | two-pass accuracy | IoU>=0.3 | mean IoU | median box area |\n|---|---|---|---|---|")
    for a, ev in alpha_sweep(rec.model, test, alphas).items():
        ious = localization_ious(ev, test)
        areas = sorted(b.area for b in ev.boxes)
        print(f"| {a} | {ev.accuracy:.4f} | {(ious >= 0.3).mean():.3f} | {ious.mean():.3f} | "
              f"{areas[len(areas) // 2]} |")


if __name__ == "__main__":
    main()
