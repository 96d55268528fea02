import csv

import numpy as np

from hairctl.io import read_png
from hairctl.raster import HairMask, ControlFrame, ControlSequence, RasterImage
from hairctl.report import COLUMNS, frame_stats, write_report


def _seq():
    frames = []
    for i in range(3):
        px = np.zeros((20, 30, 3), dtype=np.uint8)
        mask = np.zeros((20, 30), dtype=bool)
        mask[2:4, 10 + i:12 + i] = True
        px[mask] = (255, 128, 128)
        px[15, 0:5] = (0, 255, 0)
        frames.append(ControlFrame(RasterImage(px), i, HairMask(mask)))
    return ControlSequence(frames, (30, 20), 16.0)


def test_frame_stats_by_hand():
    rows = frame_stats(_seq())
    assert [r[:3] for r in rows] == [(1, 4, 5), (2, 4, 5), (3, 4, 5)]
    assert [r[3] for r in rows] == [10.5, 11.5, 12.5]
    assert all(r[4] == 2.5 for r in rows)


def test_write_report(tmp_path):
    csv_path, png_path = write_report(_seq(), tmp_path / "r")
    with open(csv_path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == COLUMNS and len(rows) == 4
    assert rows[2] == ["2", "4", "5", "11.5000", "2.5000"]
    img = read_png(png_path)
    assert img.ndim == 3 and img.shape[0] > 100 and img.shape[1] > 100
