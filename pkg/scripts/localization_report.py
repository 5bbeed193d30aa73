"""Localization quality of the trained model plus a few overlay images."""
from pathlib import Path

import numpy as np
from _common import parser, setup

from gacnn.data import generate_synthetic, synth_spec_from_config
from gacnn.experiments import localization_ious, run
from gacnn.images import GREEN, RED, draw_box, write_image
from gacnn.oam import BBox
from gacnn.training import evaluate


def main():
    p = parser(__doc__)
    p.add_argument("--run", default="gsc_oam")
    p.add_argument("--overlays", type=int, default=8)
    p.add_argument("--out", default="localization")
    args = p.parse_args()
    setup(args)
    rec = run(args.run, args.override, args.cache)
    _, test = generate_synthetic(synth_spec_from_config(rec.config))
    ev = evaluate(rec.model, test, "two-pass")
    ious = localization_ious(ev, test)
    glyph_inside = np.mean([b.row_min <= r <= b.row_max and b.col_min <= c <= b.col_max
                            for b, (r, c) in zip(ev.boxes, test.glyph_centers)])
    print(f"images: {len(ious)}")
    print(f"IoU >= 0.3: {(ious >= 0.3).mean():.3f}   IoU >= 0.5: {(ious >= 0.5).mean():.3f}   mean: {ious.mean():.3f}")
    print(f"boxes containing the class glyph: {glyph_inside:.3f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(min(args.overlays, len(test))):
        img = draw_box(draw_box(test.images[i], ev.boxes[i], RED),
                       BBox(*(int(v) for v in test.boxes[i]), space="image"), GREEN)
        write_image(out / f"{i:05d}.ppm", img)
    print(f"overlays in {out}/ (red: estimate, green: ground truth)")


if __name__ == "__main__":
    main()
