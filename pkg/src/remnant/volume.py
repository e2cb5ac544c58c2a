"""Raw volume images and boot-record geometry for FAT and NTFS volumes.

Everything else in the package sits on top of this module: it opens an
image strictly read-only, decides what filesystem the boot record claims
to be, and turns cluster numbers into byte offsets.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from enum import Enum

BOOT_SIGNATURE = b"\x55\xaa"  # bytes 510..512 of the boot sector
NTFS_OEM = b"NTFS    "        # bytes 3..11

VALID_SECTOR_SIZES = (512, 1024, 2048, 4096)
MAX_SECTORS_PER_CLUSTER = 128

# FAT type is decided by the count of data clusters, nothing else.
FAT12_CLUSTER_LIMIT = 4085   # below this: FAT12
FAT16_CLUSTER_LIMIT = 65525  # below this: FAT16, else FAT32

MIN_IMAGE_BYTES = 512


class VolumeError(Exception):
    """Base class for volume-level failures."""


class UnrecognizedVolume(VolumeError):
    """The boot sector is not a recognizable FAT or NTFS volume."""


class CorruptBootRecord(VolumeError):
    """Boot record geometry violates filesystem invariants."""


class ClusterRangeError(VolumeError):
    """A cluster number lies outside the volume's addressable heap."""


class FsKind(Enum):
    FAT12 = "FAT12"
    FAT16 = "FAT16"
    FAT32 = "FAT32"
    NTFS = "NTFS"

    @property
    def is_fat(self) -> bool:
        return self is not FsKind.NTFS


class VolumeImage:
    """A read-only window onto a disk image file or byte buffer.

    The window starts ``base_offset`` bytes into the backing store (for
    images that carry a partition table in front of the volume).  Reads
    are positional, so one image can be shared by concurrent readers.
    """

    def __init__(self, *, path=None, buffer=None, base_offset=0):
        if (path is None) == (buffer is None):
            raise ValueError("exactly one of path/buffer required")
        self.path = os.fspath(path) if path is not None else None
        self.base_offset = base_offset
        self._buffer = None
        self._fd = None
        if buffer is not None:
            self._buffer = bytes(buffer)
            backing = len(self._buffer)
        else:
            self._fd = os.open(self.path, os.O_RDONLY)
            backing = os.fstat(self._fd).st_size
        if base_offset < 0 or base_offset >= backing:
            self.close()
            raise VolumeError("offset beyond end of image")
        self.size = backing - base_offset
        if self.size < MIN_IMAGE_BYTES:
            self.close()
            raise VolumeError("image smaller than one sector")

    @classmethod
    def from_bytes(cls, data, base_offset=0) -> "VolumeImage":
        return cls(buffer=data, base_offset=base_offset)

    def read_at(self, offset: int, length: int) -> bytes:
        """Read exactly ``length`` bytes at ``offset`` (volume-relative)."""
        if offset < 0 or length < 0 or offset + length > self.size:
            raise VolumeError(
                "read [%d:%d) outside volume of %d bytes"
                % (offset, offset + length, self.size)
            )
        pos = self.base_offset + offset
        if self._buffer is not None:
            return self._buffer[pos:pos + length]
        out = os.pread(self._fd, length, pos)
        if len(out) != length:
            raise VolumeError("short read from backing file")
        return out

    def close(self) -> None:
        if getattr(self, "_fd", None) is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self) -> "VolumeImage":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        src = self.path if self.path is not None else "<buffer>"
        return f"VolumeImage({src!r}, base_offset={self.base_offset}, size={self.size})"


def open_image(path, base_offset: int = 0) -> VolumeImage:
    """Open a disk image file read-only.

    Raises FileNotFoundError for a missing file, VolumeError when the
    offset falls beyond the end or fewer than 512 bytes remain past it.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return VolumeImage(path=path, base_offset=base_offset)


@dataclass(frozen=True)
class VolumeDescriptor:
    """Parsed boot-record geometry, enough to place any cluster."""

    kind: FsKind
    bytes_per_sector: int
    sectors_per_cluster: int
    total_sectors: int
    # FAT-only fields (None on NTFS)
    reserved_sectors: int | None = None
    num_fats: int | None = None
    sectors_per_fat: int | None = None
    root_entries: int | None = None      # FAT12/16 fixed root slots
    root_dir_sector: int | None = None   # FAT12/16 root start sector
    root_cluster: int | None = None      # FAT32 root chain head
    first_data_sector: int | None = None
    cluster_count: int | None = None     # count of data clusters
    # NTFS-only fields
    mft_lcn: int | None = None
    mft_mirror_lcn: int | None = None
    mft_record_size: int | None = None
    volume_serial: int | None = None

    @property
    def cluster_size(self) -> int:
        return self.bytes_per_sector * self.sectors_per_cluster

    @property
    def total_clusters(self) -> int:
        """Addressable clusters: LCN space on NTFS, heap size on FAT."""
        if self.kind is FsKind.NTFS:
            return self.total_sectors // self.sectors_per_cluster
        return self.cluster_count

    @property
    def max_cluster(self) -> int:
        """Highest valid cluster number."""
        if self.kind is FsKind.NTFS:
            return self.total_clusters - 1
        return self.cluster_count + 1  # FAT numbering starts at 2


@dataclass(frozen=True)
class ClusterRef:
    """A cluster number together with its resolved byte offset."""

    cluster: int
    offset: int


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def detect_filesystem(img: VolumeImage) -> VolumeDescriptor:
    """Classify the volume at the image's base offset and parse geometry.

    FAT12/16/32 are told apart by data-cluster count; NTFS by the OEM
    signature.  Geometry that violates the on-disk invariants raises
    CorruptBootRecord, an unrecognizable sector UnrecognizedVolume.
    """
    boot = img.read_at(0, 512)
    if boot[510:512] != BOOT_SIGNATURE:
        raise UnrecognizedVolume("not a recognized volume")
    if boot[3:11] == NTFS_OEM:
        return _parse_ntfs_boot(boot)
    return _parse_fat_boot(boot)


def _parse_ntfs_boot(boot: bytes) -> VolumeDescriptor:
    bps, = struct.unpack_from("<H", boot, 0x0B)
    spc = boot[0x0D]
    total_sectors, = struct.unpack_from("<Q", boot, 0x28)
    mft_lcn, = struct.unpack_from("<Q", boot, 0x30)
    mirror_lcn, = struct.unpack_from("<Q", boot, 0x38)
    clusters_per_record = struct.unpack_from("<b", boot, 0x40)[0]
    serial, = struct.unpack_from("<Q", boot, 0x48)

    if bps not in VALID_SECTOR_SIZES:
        raise CorruptBootRecord("corrupt boot record: bad sector size %d" % bps)
    if not _is_pow2(spc) or spc > MAX_SECTORS_PER_CLUSTER:
        raise CorruptBootRecord("corrupt boot record: bad sectors/cluster %d" % spc)
    if total_sectors == 0:
        raise CorruptBootRecord("corrupt boot record: zero sector count")

    cluster_size = bps * spc
    if clusters_per_record >= 0:
        record_size = clusters_per_record * cluster_size
    else:
        record_size = 1 << (-clusters_per_record)
    if not _is_pow2(record_size) or record_size < 64:
        raise CorruptBootRecord("corrupt boot record: bad MFT record size")

    total_clusters = total_sectors // spc
    if mft_lcn >= total_clusters:
        raise CorruptBootRecord("corrupt boot record: MFT beyond volume")

    return VolumeDescriptor(
        kind=FsKind.NTFS,
        bytes_per_sector=bps,
        sectors_per_cluster=spc,
        total_sectors=total_sectors,
        mft_lcn=mft_lcn,
        mft_mirror_lcn=mirror_lcn,
        mft_record_size=record_size,
        volume_serial=serial,
    )


def _parse_fat_boot(boot: bytes) -> VolumeDescriptor:
    bps, = struct.unpack_from("<H", boot, 0x0B)
    spc = boot[0x0D]
    reserved, = struct.unpack_from("<H", boot, 0x0E)
    num_fats = boot[0x10]
    root_entries, = struct.unpack_from("<H", boot, 0x11)
    totsec16, = struct.unpack_from("<H", boot, 0x13)
    fatsz16, = struct.unpack_from("<H", boot, 0x16)
    totsec32, = struct.unpack_from("<I", boot, 0x20)
    fatsz32, = struct.unpack_from("<I", boot, 0x24)
    root_cluster, = struct.unpack_from("<I", boot, 0x2C)

    if bps not in VALID_SECTOR_SIZES:
        raise CorruptBootRecord("corrupt boot record: bad sector size %d" % bps)
    if not _is_pow2(spc) or spc > MAX_SECTORS_PER_CLUSTER:
        raise CorruptBootRecord("corrupt boot record: bad sectors/cluster %d" % spc)
    if reserved == 0 or num_fats == 0:
        raise CorruptBootRecord("corrupt boot record: reserved/FAT counts")

    total_sectors = totsec16 or totsec32
    sectors_per_fat = fatsz16 or fatsz32
    if total_sectors == 0 or sectors_per_fat == 0:
        raise CorruptBootRecord("corrupt boot record: zero FAT geometry")

    root_dir_sectors = (root_entries * 32 + bps - 1) // bps
    first_data_sector = reserved + num_fats * sectors_per_fat + root_dir_sectors
    if first_data_sector >= total_sectors:
        raise CorruptBootRecord("corrupt boot record: no data region")
    cluster_count = (total_sectors - first_data_sector) // spc
    if cluster_count == 0:
        raise CorruptBootRecord("corrupt boot record: empty cluster heap")

    if cluster_count < FAT12_CLUSTER_LIMIT:
        kind = FsKind.FAT12
    elif cluster_count < FAT16_CLUSTER_LIMIT:
        kind = FsKind.FAT16
    else:
        kind = FsKind.FAT32

    if kind is FsKind.FAT32:
        if fatsz16 != 0 or root_entries != 0:
            raise CorruptBootRecord("corrupt boot record: FAT32 with 16-bit fields")
        if root_cluster < 2 or root_cluster >= cluster_count + 2:
            raise CorruptBootRecord("corrupt boot record: root cluster out of heap")
    else:
        if root_entries == 0:
            raise CorruptBootRecord("corrupt boot record: no root directory slots")

    serial_off = 0x43 if kind is FsKind.FAT32 else 0x27
    serial, = struct.unpack_from("<I", boot, serial_off)

    return VolumeDescriptor(
        kind=kind,
        bytes_per_sector=bps,
        sectors_per_cluster=spc,
        total_sectors=total_sectors,
        reserved_sectors=reserved,
        num_fats=num_fats,
        sectors_per_fat=sectors_per_fat,
        root_entries=root_entries if kind is not FsKind.FAT32 else 0,
        root_dir_sector=(reserved + num_fats * sectors_per_fat)
        if kind is not FsKind.FAT32 else None,
        root_cluster=root_cluster if kind is FsKind.FAT32 else None,
        first_data_sector=first_data_sector,
        cluster_count=cluster_count,
        volume_serial=serial,
    )


def cluster_offset(desc: VolumeDescriptor, cluster: int) -> int:
    """Byte offset (volume-relative) of a cluster.

    FAT counts data clusters from 2 past the first data sector; NTFS
    LCNs count from the very start of the volume.
    """
    if desc.kind is FsKind.NTFS:
        if cluster < 0 or cluster >= desc.total_clusters:
            raise ClusterRangeError("LCN %d outside volume" % cluster)
        return cluster * desc.cluster_size
    if cluster < 2 or cluster > desc.max_cluster:
        raise ClusterRangeError("cluster %d outside heap" % cluster)
    return (desc.first_data_sector * desc.bytes_per_sector
            + (cluster - 2) * desc.cluster_size)


def cluster_ref(desc: VolumeDescriptor, cluster: int) -> ClusterRef:
    return ClusterRef(cluster, cluster_offset(desc, cluster))


def read_clusters(img: VolumeImage, desc: VolumeDescriptor, clusters) -> bytes:
    """Concatenate the raw bytes of the given clusters, in order.

    All cluster numbers are validated before any byte is read, so an
    out-of-range member aborts the whole call rather than returning a
    silently short result.  Adjacent cluster numbers are merged into a
    single read.
    """
    clusters = list(clusters)
    offsets = [cluster_offset(desc, c) for c in clusters]
    if not clusters:
        return b""
    size = desc.cluster_size
    parts = []
    run_start = offsets[0]
    run_len = size
    for prev, off in zip(offsets, offsets[1:]):
        if off == prev + size:
            run_len += size
        else:
            parts.append(img.read_at(run_start, run_len))
            run_start, run_len = off, size
    parts.append(img.read_at(run_start, run_len))
    return b"".join(parts)
