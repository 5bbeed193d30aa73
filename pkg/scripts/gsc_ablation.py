"""Single head vs. multi-granularity heads vs. adding the localization pass."""
from _common import parser, setup

from gacnn.experiments import run
from gacnn.training import evaluate


def main():
    args = parser(__doc__).parse_args()
    setup(args)
    rows = []
    for name, label in (("single", "S=1"), ("gsc", "S=3"), ("gsc_oam", "S=3 + localization")):
        rec = run(name, args.override, args.cache)
        _, test = _data(rec)
        mode = "two-pass" if name == "gsc_oam" else "coarse"
        ev = evaluate(rec.model, test, mode)
        rows.append((label, mode, ev.accuracy, rec.seconds))
        if name == "gsc_oam":
            rows.append((label, "coarse", evaluate(rec.model, test, "coarse").accuracy, rec.seconds))
    print("| model | inference | test accuracy | train seconds |\n|---|---|---|---|")
    for label, mode, acc, sec in rows:
        print(f"| {label} | {mode} | {acc:.4f} | {sec:.0f} |")


def _data(rec):
    from gacnn.data import generate_synthetic, synth_spec_from_config

    return generate_synthetic(synth_spec_from_config(rec.config))


if __name__ == "__main__":
    main()
