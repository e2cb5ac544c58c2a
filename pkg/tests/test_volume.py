"""Boot-record detection and cluster addressing."""

import struct

import pytest

from remnant import forge
from remnant.volume import (
    ClusterRangeError,
    FsKind,
    UnrecognizedVolume,
    VolumeDescriptor,
    VolumeError,
    VolumeImage,
    cluster_offset,
    detect_filesystem,
    open_image,
    read_clusters,
)

MiB = 1024 * 1024


# ---------------------------------------------------------------- images

def test_open_image_reads_exact_window(tmp_path):
    path = tmp_path / "raw.img"
    payload = bytes(range(256)) * 8  # 2048 bytes
    path.write_bytes(payload)

    with open_image(path) as img:
        assert img.size == 2048
        assert img.read_at(0, 16) == payload[:16]
        assert img.read_at(1000, 48) == payload[1000:1048]
        assert img.read_at(2048, 0) == b""


def test_open_image_base_offset_shifts_origin(tmp_path):
    path = tmp_path / "part.img"
    junk = b"\xAA" * 777
    body = bytes(range(256)) * 4
    path.write_bytes(junk + body)

    with open_image(path, base_offset=777) as img:
        assert img.size == len(body)
        assert img.read_at(0, 8) == body[:8]
        assert img.read_at(len(body) - 4, 4) == body[-4:]


def test_open_image_offset_beyond_end(tmp_path):
    path = tmp_path / "short.img"
    path.write_bytes(b"\x00" * 1024)
    with pytest.raises(VolumeError, match="offset beyond end"):
        open_image(path, base_offset=4096)


def test_open_image_under_one_sector(tmp_path):
    path = tmp_path / "tiny.img"
    path.write_bytes(b"\x00" * 100)
    with pytest.raises(VolumeError):
        open_image(path)


def test_open_image_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        open_image(tmp_path / "absent.img")


def test_read_at_rejects_out_of_range(tmp_path):
    path = tmp_path / "raw.img"
    path.write_bytes(b"\x00" * 1024)
    with open_image(path) as img:
        with pytest.raises(VolumeError):
            img.read_at(-1, 4)
        with pytest.raises(VolumeError):
            img.read_at(1020, 8)  # crosses the end


def test_from_bytes_matches_file_backed(tmp_path):
    data = bytes(range(256)) * 4
    path = tmp_path / "raw.img"
    path.write_bytes(data)
    mem = VolumeImage.from_bytes(data)
    with open_image(path) as disk:
        assert mem.read_at(100, 50) == disk.read_at(100, 50)


# ----------------------------------------------------------- detection

def test_detect_rejects_all_zero_sector():
    img = VolumeImage.from_bytes(b"\x00" * MiB)
    with pytest.raises(UnrecognizedVolume):
        detect_filesystem(img)


def test_detect_requires_boot_signature(base_images):
    path, _ = base_images["fat32"]
    raw = bytearray(path.read_bytes())
    raw[510:512] = b"\x00\x00"  # clobber the 0x55AA marker
    with pytest.raises(UnrecognizedVolume):
        detect_filesystem(VolumeImage.from_bytes(bytes(raw)))


@pytest.mark.parametrize("fs", ["fat12", "fat16", "fat32", "ntfs"])
def test_detect_matches_forged_geometry(base_images, fs):
    path, truth = base_images[fs]
    with open_image(path) as img:
        desc = detect_filesystem(img)

    assert desc.kind.value.lower() == fs
    geom = truth.geometry
    assert desc.bytes_per_sector == geom["bytes_per_sector"]
    assert desc.sectors_per_cluster == geom["sectors_per_cluster"]
    assert desc.total_sectors * desc.bytes_per_sector <= truth.total_size
    if fs == "ntfs":
        assert desc.mft_record_size == 1024
        assert desc.mft_lcn == geom["mft_lcn"]
    else:
        assert desc.cluster_count == geom["cluster_count"]
        assert desc.first_data_sector == geom["first_data_sector"]


@pytest.mark.parametrize(
    "fs,size,bps,spc",
    [
        ("fat12", 1 * MiB, 512, 1),
        ("fat12", 2 * MiB, 512, 2),
        ("fat12", 2 * MiB, 1024, 1),
        ("fat16", 8 * MiB, 512, 2),
        ("fat16", 16 * MiB, 512, 4),
        ("fat16", 16 * MiB, 2048, 1),
        ("fat32", 64 * MiB, 512, 1),
        ("fat32", 128 * MiB, 512, 2),
        ("ntfs", 16 * MiB, 512, 4),
        ("ntfs", 32 * MiB, 512, 8),
        ("ntfs", 32 * MiB, 1024, 2),
    ],
)
def test_detect_roundtrips_builder_geometry(tmp_path, fs, size, bps, spc):
    """Whatever geometry the forger writes, detection must read back."""
    spec = forge.CorpusSpec(
        filesystem=fs,
        total_size=size,
        files=[],
        bytes_per_sector=bps,
        sectors_per_cluster=spc,
    )
    path = tmp_path / "grid.img"
    forge.build_image(spec, path)

    with open_image(path) as img:
        desc = detect_filesystem(img)
    assert desc.kind.value.lower() == fs
    assert desc.bytes_per_sector == bps
    assert desc.sectors_per_cluster == spc
    assert desc.cluster_size == bps * spc
    assert desc.total_sectors == size // bps


def test_fat_class_is_decided_by_cluster_count(base_images):
    # The three FAT widths carry the same boot layout; only the heap
    # size separates them, so the detector must not trust the label.
    for fs, ceiling in (("fat12", 4085), ("fat16", 65525)):
        path, _ = base_images[fs]
        with open_image(path) as img:
            desc = detect_filesystem(img)
        assert desc.cluster_count < ceiling
    path, _ = base_images["fat32"]
    with open_image(path) as img:
        desc = detect_filesystem(img)
    assert desc.cluster_count >= 65525


# ----------------------------------------------------- cluster addressing

def _fat32_desc():
    return VolumeDescriptor(
        kind=FsKind.FAT32,
        bytes_per_sector=512,
        sectors_per_cluster=8,
        total_sectors=131072,
        reserved_sectors=32,
        num_fats=2,
        sectors_per_fat=1008,
        root_cluster=2,
        first_data_sector=2048,
        cluster_count=16128,
    )


def test_cluster_offset_fat32_worked_example():
    desc = _fat32_desc()
    # first_data_sector 2048 * 512 B/sector puts cluster 2 at 1 MiB
    assert cluster_offset(desc, 2) == 1_048_576
    assert cluster_offset(desc, 5) == 1_060_864


def test_cluster_offset_steps_by_cluster_size():
    desc = _fat32_desc()
    for c in range(2, 40):
        assert cluster_offset(desc, c + 1) - cluster_offset(desc, c) == desc.cluster_size


def test_cluster_offset_rejects_outside_heap():
    desc = _fat32_desc()
    with pytest.raises(ClusterRangeError):
        cluster_offset(desc, 0)
    with pytest.raises(ClusterRangeError):
        cluster_offset(desc, 1)
    with pytest.raises(ClusterRangeError):
        cluster_offset(desc, desc.cluster_count + 2)  # one past max


def _ntfs_desc(total_sectors=65536):
    return VolumeDescriptor(
        kind=FsKind.NTFS,
        bytes_per_sector=512,
        sectors_per_cluster=8,
        total_sectors=total_sectors,
        mft_lcn=4,
        mft_mirror_lcn=total_sectors // 16,
        mft_record_size=1024,
        volume_serial=1,
    )


def test_cluster_offset_ntfs_counts_from_zero():
    desc = _ntfs_desc()
    assert cluster_offset(desc, 0) == 0
    assert cluster_offset(desc, 3) == 3 * 4096
    with pytest.raises(ClusterRangeError):
        cluster_offset(desc, desc.total_clusters)
    with pytest.raises(ClusterRangeError):
        cluster_offset(desc, -1)


def test_read_clusters_concatenates_in_call_order():
    desc = _ntfs_desc(total_sectors=8 * 8)  # 8 clusters of 4 KiB
    buf = bytearray()
    for i in range(8):
        buf += bytes([i]) * 4096
    img = VolumeImage.from_bytes(bytes(buf))

    out = read_clusters(img, desc, [3, 5, 4])
    assert out == b"\x03" * 4096 + b"\x05" * 4096 + b"\x04" * 4096
    assert read_clusters(img, desc, []) == b""
