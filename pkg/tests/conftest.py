"""Shared fixtures: forged disk images with known contents.

Building an image is cheap (in-memory bytearray), but the 64 MiB ones
are worth reusing, so the pristine copies are session-scoped and every
test that wants to mutate an image works on a private copy.
"""

import shutil

import pytest

from remnant import forge

FS_KINDS = ("fat12", "fat16", "fat32", "ntfs")

# Smaller sizes for the small FATs keep the suite quick; the 64 MiB
# defaults are exercised by the acceptance tests.
IMAGE_SIZES = {
    "fat12": 2 * 1024 * 1024,
    "fat16": 16 * 1024 * 1024,
    "fat32": 64 * 1024 * 1024,
    "ntfs": 64 * 1024 * 1024,
}


@pytest.fixture(scope="session")
def base_images(tmp_path_factory):
    """Map of filesystem name -> (image path, GroundTruth)."""
    root = tmp_path_factory.mktemp("images")
    images = {}
    for fs in FS_KINDS:
        img = root / ("%s.img" % fs)
        spec = forge.standard_corpus(fs, total_size=IMAGE_SIZES[fs])
        truth = forge.build_image(spec, img, truth_path=str(img) + ".truth.json")
        images[fs] = (img, truth)
    return images


@pytest.fixture
def image_copy(base_images, tmp_path):
    """Factory: private copy of a base image, optionally mutated."""

    def make(fs, mutation=None, target=None):
        src, _ = base_images[fs]
        dst = tmp_path / src.name
        shutil.copy(src, dst)
        truth = forge.GroundTruth.load(str(src) + ".truth.json")
        if mutation is not None:
            forge.apply_mutation(dst, mutation, truth=truth, target=target)
            truth.mutations.append(mutation)
        return dst, truth

    return make
