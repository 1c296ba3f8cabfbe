"""
Pixel rasters of clean and corrupted digits. The grid is built with Pillow and embedded in an
SVG file as a PNG, with a caption above every column.
"""

import base64
import io
import logging
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
from PIL import Image

from spreadlearn.engine import streams
from spreadlearn.engine.channels import Channel, GaussianChannel, corrupt_discrete, corrupt_gaussian
from spreadlearn.engine.errors import DataError
from spreadlearn.ui.colours import Colour

logger = logging.getLogger(__name__)

IMAGE_SIDE = 28
TILE_SCALE = 4
TILE_GAP = 6
CAPTION_HEIGHT = 18


def to_grey(values, num_states):
    """Map pixel values (states, or continuous values on [0, 1]) to 8-bit grey levels."""
    values = np.asarray(values, dtype=float)
    if num_states is not None:
        values = values / (num_states - 1)
    return np.clip(np.rint(values * 255), 0, 255).astype(np.uint8)


def tile(pixels, side=IMAGE_SIDE, scale=TILE_SCALE) -> Image.Image:
    """One digit as a greyscale tile, enlarged without smoothing."""
    pixels = np.asarray(pixels)
    if pixels.size != side * side:
        raise DataError(f'expected {side * side} pixels, got {pixels.size}')
    image = Image.fromarray(pixels.reshape(side, side).astype(np.uint8))
    return image.resize((side * scale, side * scale), Image.NEAREST)


def corrupted_versions(images, settings: Sequence[Tuple[str, Channel]], num_states, seed):
    """
    Each (caption, channel) setting applied once to every image. Discrete channels act on the
    states; a Gaussian channel acts on the values rescaled to [0, 1].
    """
    images = np.asarray(images)
    columns = []
    for caption, channel in settings:
        column_seed = streams.derive_seed(seed, caption)
        if isinstance(channel, GaussianChannel):
            scaled = images / (num_states - 1)
            columns.append(to_grey(corrupt_gaussian(scaled, channel, column_seed), None))
        else:
            columns.append(to_grey(corrupt_discrete(images, channel, column_seed), num_states))
    return columns


def noisy_image_grid(images, settings: Sequence[Tuple[str, Channel]], num_states, seed,
                     side=IMAGE_SIDE, scale=TILE_SCALE) -> Tuple[Image.Image, list]:
    """
    A grid with one row per image: the clean digit first, then one corruption per setting.
    Returns the raster and the column captions.
    """
    images = np.asarray(images)
    if images.ndim != 2 or len(images) == 0:
        raise DataError('expected a non-empty matrix of flattened images')
    columns = [to_grey(images, num_states)] + corrupted_versions(images, settings, num_states, seed)
    captions = ['clean'] + [caption for caption, _ in settings]

    step = side * scale + TILE_GAP
    grid = Image.new('RGB', (step * len(columns) - TILE_GAP, step * len(images) - TILE_GAP),
                     Colour.IMAGE_BACKGROUND.value)
    for col, column in enumerate(columns):
        for row, pixels in enumerate(column):
            grid.paste(tile(pixels, side, scale), (col * step, row * step))
    return grid, captions


def write_grid_svg(grid: Image.Image, captions, path, tile_width=IMAGE_SIDE * TILE_SCALE):
    """Embed the raster in an SVG file, captions above their columns."""
    buffer = io.BytesIO()
    grid.save(buffer, format='PNG')
    encoded = base64.b64encode(buffer.getvalue()).decode('ascii')
    width, height = grid.size
    step = tile_width + TILE_GAP
    texts = ''.join(
        f'<text x="{col * step + tile_width / 2:g}" y="{CAPTION_HEIGHT - 5}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="11">{caption}</text>'
        for col, caption in enumerate(captions))
    svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height + CAPTION_HEIGHT}">'
           f'{texts}<image x="0" y="{CAPTION_HEIGHT}" width="{width}" height="{height}" '
           f'href="data:image/png;base64,{encoded}"/></svg>\n')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg)
    logger.info('wrote %s', path)
    return path
