"""Simulate a short playroom session and save a contact sheet of frames and crops.

    python3 demos/simulate_and_crop.py [out.png]

Top row: full frames with the gaze point marked.  Middle row: 32-px crops
centred on the gaze.  Bottom row: crops at uniformly random points.
"""

import sys

import numpy as np
from PIL import Image, ImageDraw

from gaze_ssl.playroom import GazePolicy, SessionConfig, simulate_session
from gaze_ssl.streams import HUMAN_GAZE, RANDOM_GAZE, build_stream, resize_bilinear

CELL = 96


def tile(img):
    return Image.fromarray(resize_bilinear(img, CELL) if img.shape[0] != CELL else img)


def main(out="contact_sheet.png"):
    session = simulate_session(SessionConfig(duration_s=10.0, session_id="demo",
                                             policy=GazePolicy.toddler(policy_seed=1)))
    gaze_crops = build_stream(session, HUMAN_GAZE, 32)
    random_crops = build_stream(session, RANDOM_GAZE, 32, seed=1)
    picks = np.linspace(0, len(session) - 1, 8).astype(int)

    sheet = Image.new("RGB", (CELL * len(picks), CELL * 3), "white")
    scale = CELL / session.intr.width_px
    for col, f in enumerate(picks):
        frame = tile(session.frames[f])
        gx, gy = session.gaze[f] * scale
        ImageDraw.Draw(frame).ellipse([gx - 3, gy - 3, gx + 3, gy + 3], outline=(255, 0, 0), width=2)
        sheet.paste(frame, (col * CELL, 0))
        sheet.paste(tile(gaze_crops.crops[f]), (col * CELL, CELL))
        sheet.paste(tile(random_crops.crops[f]), (col * CELL, 2 * CELL))
    sheet.save(out)

    on_toy = np.mean(session.target >= 0)
    holding = np.mean(session.holding)
    print(f"{len(session)} frames; gaze on a toy {100 * on_toy:.0f}% of the time, on a held toy {100 * holding:.0f}%")
    print(f"wrote {out}")


if __name__ == "__main__":
    main(*sys.argv[1:])
