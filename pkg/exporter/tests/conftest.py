import pytest
from PIL import Image

from peva_export.backbones import PALETTE

CATEGORIES = ["red", "green", "blue", "yellow"]


def paint(path, color, accent_pixels):
    img = Image.new("RGB", (16, 16), color)
    for i in range(accent_pixels):
        img.putpixel((i % 16, i // 16), (255, 255, 255))
    img.save(path)


@pytest.fixture()
def image_tree(tmp_path):
    """Solid-color renders: 4 categories x 3 shapes x 2 views."""
    root = tmp_path / "images"
    for category in CATEGORIES:
        for shape in range(3):
            shape_dir = root / category / f"shape{shape:02d}"
            shape_dir.mkdir(parents=True)
            for view in range(2):
                paint(shape_dir / f"view{view}.png", PALETTE[category],
                      accent_pixels=1 + shape + view)
    categories_file = tmp_path / "categories.txt"
    categories_file.write_text("\n".join(CATEGORIES) + "\n")
    return root, categories_file
