"""Smoke test for the evobc Python extension.

Uses an installed `evobc` module if there is one; otherwise builds the
extension with cargo and imports it from a temporary directory.

    python3 python/smoke_test.py
"""

import importlib
import json
import pathlib
import shutil
import subprocess
import sys
import sysconfig
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    try:
        return importlib.import_module("evobc")
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "evobc-python", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    built = ROOT / "target" / "release" / "libevobc.so"
    if not built.exists():
        built = ROOT / "target" / "release" / "libevobc.dylib"
    dest = pathlib.Path(tempfile.mkdtemp()) / ("evobc" + sysconfig.get_config_var("EXT_SUFFIX"))
    shutil.copy(built, dest)
    sys.path.insert(0, str(dest.parent))
    return importlib.import_module("evobc")


def main():
    evobc = load_module()

    a, b = evobc.BBox(0, 0, 10, 10), evobc.BBox(5, 5, 15, 15)
    assert a.area() == 100 and a.center() == (5, 5)
    assert abs(a.iou(b) - 25 / 175) < 1e-12
    assert not a.overlaps(evobc.BBox(10, 0, 20, 10))
    assert a.hull(b) == evobc.BBox(0, 0, 15, 15)

    chain = [evobc.BBox(0, 0, 10, 10), evobc.BBox(8, 0, 18, 10), evobc.BBox(16, 0, 26, 10)]
    assert evobc.merge_stage1(chain) == [evobc.BBox(0, 0, 26, 10)]
    assert evobc.merge_stage2([evobc.BBox(0, 0, 50, 50), evobc.BBox(0, 140, 50, 190)]) == [
        evobc.BBox(0, 0, 50, 190)
    ]
    assert evobc.filter_small([evobc.BBox(0, 0, 40, 49)]) == []

    assert evobc.name_record("Book", "OBC", 17) == "Book_Oracle_17"
    assert evobc.record_path("Website", "Seal", "马", 3) == "Website_Seal/马/Website_Seal_3.png"
    assert evobc.unify_category("馬", "馬\t马\n") == "马"
    try:
        evobc.name_record("Book", "Jade", 1)
        raise AssertionError("bad era accepted")
    except ValueError:
        pass

    img, truth = evobc.render_page(json.dumps({"columns": 3, "seed": 4}))
    truth = json.loads(truth)
    slices = evobc.crop_slices(img)
    assert [s.to_tuple() for s in slices] == sorted(tuple(s) for s in truth["slices"])
    glyphs = [g for g in truth["glyphs"] if g["slice_index"] == 0]
    right = max(slices, key=lambda s: s.x0)
    pixels = img.pixels()
    strip = b"".join(
        pixels[y * img.width + right.x0 : y * img.width + right.x1] for y in range(img.height)
    )
    column = evobc.GrayImage(right.x1 - right.x0, img.height, strip)
    # the raw strip still holds the header glyph above the body glyphs
    found = evobc.imnnb(column)
    assert len(found) == len(glyphs) + 1, (found, glyphs)
    body = [(b.x0 + right.x0, b.y0, b.x1 + right.x0, b.y1) for b in found[1:]]
    assert body == [tuple(g["bbox"]) for g in glyphs]

    mask = evobc.binarize(evobc.GrayImage(2, 1, bytes([0, 255])))
    assert mask == bytes([1, 0])
    comps = evobc.connected_components(evobc.GrayImage(6, 1, bytes([0, 255, 0, 255, 255, 255])))
    assert comps == [evobc.BBox(0, 0, 1, 1), evobc.BBox(2, 0, 3, 1)]
    print("evobc python smoke test passed")


if __name__ == "__main__":
    main()
