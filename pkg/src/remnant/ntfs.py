"""Master File Table parsing and deleted-file recovery for NTFS volumes.

A record is parsed strictly from its first-attribute offset; nothing is
assumed about where individual attributes sit inside the record.  The
update-sequence fixup is applied before any field beyond the record
header is trusted.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

from .report import RecoveredFile, cluster_runs
from .volume import (
    ClusterRangeError,
    FsKind,
    VolumeDescriptor,
    VolumeImage,
    cluster_offset,
    read_clusters,
)

FILE_SIGNATURE = b"FILE"
BLANK_SIGNATURE = b"\x00\x00\x00\x00"

# The update sequence protects 512-byte strides regardless of the
# physical sector size.
UPDATE_SEQUENCE_STRIDE = 512

ATTR_STANDARD_INFORMATION = 0x10
ATTR_FILE_NAME = 0x30
ATTR_VOLUME_NAME = 0x60
ATTR_VOLUME_INFORMATION = 0x70
ATTR_DATA = 0x80
ATTR_INDEX_ROOT = 0x90
ATTR_BITMAP = 0xB0
ATTR_END = 0xFFFFFFFF

RECORD_FLAG_IN_USE = 0x0001
RECORD_FLAG_DIRECTORY = 0x0002

FILE_REFERENCE_INDEX_MASK = (1 << 48) - 1

_EPOCH_1601 = datetime(1601, 1, 1, tzinfo=timezone.utc)


class MftError(Exception):
    """Base error for MFT handling."""


class FixupError(MftError):
    """Update sequence mismatch: the record is torn or overwritten."""


class RunListError(MftError):
    """A non-resident run list cannot be decoded."""


def filetime_to_iso(ticks: int) -> str | None:
    """Render a 64-bit 100ns-since-1601 timestamp as ISO-8601 UTC."""
    if ticks == 0:
        return None
    try:
        dt = _EPOCH_1601 + timedelta(microseconds=ticks // 10)
    except OverflowError:
        return None
    return dt.replace(tzinfo=None).isoformat() + "Z"


@dataclass
class MftRecordHeader:
    signature: bytes
    usa_offset: int
    usa_count: int
    sequence: int
    link_count: int
    first_attr_offset: int
    flags: int
    used_size: int
    allocated_size: int
    base_reference: int
    record_index: int

    @property
    def in_use(self) -> bool:
        return bool(self.flags & RECORD_FLAG_IN_USE)

    @property
    def is_directory(self) -> bool:
        return bool(self.flags & RECORD_FLAG_DIRECTORY)


def is_deleted(header: MftRecordHeader) -> bool:
    """A record is deleted exactly when its in-use flag bit is clear."""
    return not header.in_use


def parse_record_header(buf: bytes, record_index: int = -1) -> MftRecordHeader:
    if len(buf) < 48 or buf[0:4] != FILE_SIGNATURE:
        raise MftError("record %d: bad signature" % record_index)
    usa_offset, usa_count = struct.unpack_from("<HH", buf, 0x04)
    sequence, link_count, first_attr = struct.unpack_from("<HHH", buf, 0x10)
    flags, used, allocated = struct.unpack_from("<HII", buf, 0x16)
    base_ref, = struct.unpack_from("<Q", buf, 0x20)
    hdr = MftRecordHeader(
        signature=buf[0:4],
        usa_offset=usa_offset,
        usa_count=usa_count,
        sequence=sequence,
        link_count=link_count,
        first_attr_offset=first_attr,
        flags=flags,
        used_size=used,
        allocated_size=allocated,
        base_reference=base_ref,
        record_index=record_index,
    )
    if not (hdr.first_attr_offset < hdr.used_size <= hdr.allocated_size <= len(buf)):
        raise MftError("record %d: inconsistent sizes" % record_index)
    if hdr.first_attr_offset < 0x2A:
        raise MftError("record %d: attributes inside header" % record_index)
    return hdr


def apply_fixup(buf: bytearray) -> None:
    """Replace each stride's guard word with the stored original, in place.

    Raises FixupError when a guard word disagrees with the update
    sequence number, which means the record was torn mid-write or the
    bytes are not really a record any more.
    """
    usa_offset, usa_count = struct.unpack_from("<HH", buf, 0x04)
    if usa_count < 2 or usa_offset + 2 * usa_count > len(buf):
        raise FixupError("update sequence array out of bounds")
    if (usa_count - 1) * UPDATE_SEQUENCE_STRIDE > len(buf):
        raise FixupError("update sequence covers more strides than record")
    usn = bytes(buf[usa_offset:usa_offset + 2])
    for i in range(1, usa_count):
        end = i * UPDATE_SEQUENCE_STRIDE
        if bytes(buf[end - 2:end]) != usn:
            raise FixupError("stride %d guard mismatch" % i)
        src = usa_offset + 2 * i
        buf[end - 2:end] = buf[src:src + 2]


@dataclass
class ParsedAttribute:
    type_code: int
    name: str
    resident: bool
    attr_flags: int
    # resident form
    value: bytes | None = None
    # non-resident form
    start_vcn: int = 0
    end_vcn: int = 0
    alloc_size: int = 0
    real_size: int = 0
    initialized_size: int = 0
    run_bytes: bytes = b""

    @property
    def is_unnamed_data(self) -> bool:
        return self.type_code == ATTR_DATA and self.name == ""


@dataclass
class AttributeWalk:
    attributes: list[ParsedAttribute]
    corrupt: bool = False
    note: str = ""


def parse_attributes(record: bytes, header: MftRecordHeader) -> AttributeWalk:
    """Walk the attribute list from the first-attribute offset.

    The walk stops at the 0xFFFFFFFF terminator.  A zero-length or
    overrunning attribute ends the walk early with the partial list and
    the corruption flag set instead of raising.
    """
    walk = AttributeWalk(attributes=[])
    pos = header.first_attr_offset
    limit = min(header.used_size, len(record))
    while True:
        if pos + 4 > limit:
            walk.corrupt = True
            walk.note = "attribute walk overrun"
            break
        type_code, = struct.unpack_from("<I", record, pos)
        if type_code == ATTR_END:
            break
        if pos + 16 > limit:
            walk.corrupt = True
            walk.note = "attribute walk overrun"
            break
        length, = struct.unpack_from("<I", record, pos + 4)
        if length == 0 or length % 8 or pos + length > limit:
            walk.corrupt = True
            walk.note = "attribute walk overrun"
            break
        non_resident = record[pos + 8]
        name_len = record[pos + 9]
        name_off, = struct.unpack_from("<H", record, pos + 10)
        attr_flags, = struct.unpack_from("<H", record, pos + 12)
        name = ""
        if name_len:
            raw = record[pos + name_off:pos + name_off + 2 * name_len]
            name = raw.decode("utf-16-le", errors="replace")
        if not non_resident:
            if pos + 0x18 > limit:
                walk.corrupt = True
                walk.note = "attribute walk overrun"
                break
            value_len, = struct.unpack_from("<I", record, pos + 0x10)
            value_off, = struct.unpack_from("<H", record, pos + 0x14)
            if value_off + value_len > length:
                walk.corrupt = True
                walk.note = "resident value overrun"
                break
            walk.attributes.append(ParsedAttribute(
                type_code=type_code, name=name, resident=True,
                attr_flags=attr_flags,
                value=bytes(record[pos + value_off:pos + value_off + value_len]),
            ))
        else:
            if pos + 0x40 > limit:
                walk.corrupt = True
                walk.note = "attribute walk overrun"
                break
            start_vcn, end_vcn = struct.unpack_from("<QQ", record, pos + 0x10)
            runs_off, = struct.unpack_from("<H", record, pos + 0x20)
            alloc, real, init = struct.unpack_from("<QQQ", record, pos + 0x28)
            walk.attributes.append(ParsedAttribute(
                type_code=type_code, name=name, resident=False,
                attr_flags=attr_flags,
                start_vcn=start_vcn, end_vcn=end_vcn,
                alloc_size=alloc, real_size=real, initialized_size=init,
                run_bytes=bytes(record[pos + runs_off:pos + length]),
            ))
        pos += length
    return walk


@dataclass(frozen=True)
class Run:
    """One extent of a non-resident stream; lcn None means sparse."""

    length: int
    lcn: int | None


@dataclass
class RunList:
    runs: list[Run]

    @property
    def total_clusters(self) -> int:
        return sum(r.length for r in self.runs)

    def real_clusters(self) -> list[int]:
        """Every allocated (non-sparse) cluster number, in stream order."""
        out: list[int] = []
        for r in self.runs:
            if r.lcn is not None:
                out.extend(range(r.lcn, r.lcn + r.length))
        return out


def decode_data_runs(raw: bytes) -> RunList:
    """Decode a mapping-pairs (run list) byte string.

    Each run starts with a header byte: low nibble is the byte count of
    the unsigned run length, high nibble the byte count of the signed
    LCN delta (cumulative from zero).  A zero high nibble is a sparse
    run; a 0x00 header terminates the list.
    """
    runs: list[Run] = []
    prev_lcn = 0
    pos = 0
    terminated = False
    while pos < len(raw):
        header = raw[pos]
        pos += 1
        if header == 0x00:
            terminated = True
            break
        length_size = header & 0x0F
        offset_size = header >> 4
        if length_size == 0 or length_size > 8 or offset_size > 8:
            raise RunListError("invalid run header 0x%02x" % header)
        if pos + length_size + offset_size > len(raw):
            raise RunListError("run list truncated")
        length = int.from_bytes(raw[pos:pos + length_size], "little")
        pos += length_size
        if length == 0:
            raise RunListError("invalid run: zero length")
        if offset_size == 0:
            runs.append(Run(length, None))
            continue
        delta = int.from_bytes(raw[pos:pos + offset_size], "little", signed=True)
        pos += offset_size
        prev_lcn += delta
        if prev_lcn < 0:
            raise RunListError("run resolves before volume start")
        runs.append(Run(length, prev_lcn))
    if not terminated:
        raise RunListError("run list truncated")
    return RunList(runs)


@dataclass
class StandardInfoView:
    created: int
    modified: int
    mft_modified: int
    accessed: int
    dos_flags: int


def parse_standard_info(value: bytes) -> StandardInfoView | None:
    if len(value) < 36:
        return None
    c, m, mm, a = struct.unpack_from("<QQQQ", value, 0)
    flags, = struct.unpack_from("<I", value, 32)
    return StandardInfoView(c, m, mm, a, flags)


@dataclass
class FileNameView:
    parent_index: int
    created: int
    modified: int
    real_size: int
    alloc_size: int
    fn_flags: int
    namespace: int
    name: str


def parse_file_name(value: bytes) -> FileNameView | None:
    if len(value) < 0x42:
        return None
    parent_ref, = struct.unpack_from("<Q", value, 0)
    created, modified = struct.unpack_from("<QQ", value, 8)
    alloc, real = struct.unpack_from("<QQ", value, 0x28)
    fn_flags, = struct.unpack_from("<I", value, 0x38)
    name_len = value[0x40]
    namespace = value[0x41]
    raw = value[0x42:0x42 + 2 * name_len]
    if len(raw) < 2 * name_len:
        return None
    return FileNameView(
        parent_index=parent_ref & FILE_REFERENCE_INDEX_MASK,
        created=created, modified=modified,
        real_size=real, alloc_size=alloc,
        fn_flags=fn_flags, namespace=namespace,
        name=raw.decode("utf-16-le", errors="replace"),
    )


@dataclass
class MftRecord:
    header: MftRecordHeader
    data: bytes          # fixup already applied
    offset: int          # absolute byte offset inside the volume
    orphaned: bool = False


@dataclass
class MftScanStats:
    records_seen: int = 0
    file_records: int = 0
    corrupt: int = 0
    skipped: int = 0
    carve_candidates: int = 0


def _require_ntfs(desc: VolumeDescriptor) -> None:
    if desc.kind is not FsKind.NTFS:
        raise MftError("not an NTFS volume descriptor")


def mft_extent(img: VolumeImage, desc: VolumeDescriptor) -> RunList:
    """Bootstrap: decode record 0's own $DATA run list."""
    _require_ntfs(desc)
    base = cluster_offset(desc, desc.mft_lcn)
    raw = bytearray(img.read_at(base, desc.mft_record_size))
    if raw[0:4] != FILE_SIGNATURE:
        raise MftError("MFT unreadable")
    try:
        apply_fixup(raw)
        hdr = parse_record_header(bytes(raw), 0)
    except MftError as exc:
        raise MftError("MFT unreadable: %s" % exc) from exc
    walk = parse_attributes(bytes(raw), hdr)
    for attr in walk.attributes:
        if attr.is_unnamed_data and not attr.resident:
            return decode_data_runs(attr.run_bytes)
    raise MftError("MFT unreadable: record 0 has no data extent")


def scan_mft(img: VolumeImage, desc: VolumeDescriptor,
             stats: MftScanStats | None = None):
    """Yield every record slot of the live MFT, fixups applied.

    Slots with a blank or foreign signature are skipped and counted;
    slots whose fixup fails are counted as corrupt.
    """
    _require_ntfs(desc)
    if stats is None:
        stats = MftScanStats()
    extent = mft_extent(img, desc)
    record_size = desc.mft_record_size
    cs = desc.cluster_size
    index = 0
    pending = b""
    pending_offset = 0
    for run in extent.runs:
        if run.lcn is None:
            continue  # a sparse MFT extent holds no records
        chunk = read_clusters(img, desc, range(run.lcn, run.lcn + run.length))
        base = cluster_offset(desc, run.lcn)
        if pending:
            # a record straddling two runs: stitch it together
            need = record_size - len(pending)
            buf = pending + chunk[:need]
            chunk = chunk[need:]
            base_here = pending_offset
            pending = b""
            yield from _emit_record(buf, base_here, index, stats)
            index += 1
            base += need
        pos = 0
        while pos + record_size <= len(chunk):
            yield from _emit_record(chunk[pos:pos + record_size],
                                    base + pos, index, stats)
            index += 1
            pos += record_size
        if pos < len(chunk):
            pending = chunk[pos:]
            pending_offset = base + pos


def _emit_record(buf: bytes, offset: int, index: int, stats: MftScanStats):
    stats.records_seen += 1
    if buf[0:4] == BLANK_SIGNATURE or buf[0:4] != FILE_SIGNATURE:
        stats.skipped += 1
        return
    raw = bytearray(buf)
    try:
        apply_fixup(raw)
        hdr = parse_record_header(bytes(raw), index)
    except MftError:
        stats.corrupt += 1
        return
    stats.file_records += 1
    yield MftRecord(hdr, bytes(raw), offset)


def carve_records(img: VolumeImage, desc: VolumeDescriptor,
                  known_offsets: set[int], skip_clusters: set[int],
                  stats: MftScanStats):
    """Deep scan: find FILE records outside the live MFT extent.

    Quick-format leaves the old MFT as anonymous clusters; this walks
    every cluster not claimed by a live structure and validates any
    record-aligned FILE signature it meets.
    """
    _require_ntfs(desc)
    record_size = desc.mft_record_size
    cs = desc.cluster_size
    step = min(record_size, cs)
    total = desc.total_clusters
    batch_clusters = max(1, (4 << 20) // cs)
    for start in range(0, total, batch_clusters):
        count = min(batch_clusters, total - start)
        base = cluster_offset(desc, start)
        chunk = img.read_at(base, count * cs)
        view = memoryview(chunk)
        for ci in range(count):
            cluster = start + ci
            if cluster in skip_clusters:
                continue
            coff = ci * cs
            for slot in range(0, cs, step):
                pos = coff + slot
                if view[pos:pos + 4] != FILE_SIGNATURE:
                    continue
                abs_off = base + pos
                if abs_off in known_offsets:
                    continue
                if pos + record_size > len(chunk):
                    have = len(chunk) - pos
                    try:
                        tail = img.read_at(abs_off + have, record_size - have)
                    except Exception:
                        continue  # slot runs off the end of the volume
                    buf = bytes(view[pos:]) + tail
                else:
                    buf = bytes(view[pos:pos + record_size])
                raw = bytearray(buf)
                try:
                    apply_fixup(raw)
                    hdr = parse_record_header(bytes(raw), -1)
                except MftError:
                    continue
                stats.carve_candidates += 1
                yield MftRecord(hdr, bytes(raw), abs_off, orphaned=True)


@dataclass
class DeletedNtfsEntry:
    record_index: int
    name: str
    name_known: bool
    is_directory: bool
    size: int
    created: int
    modified: int
    parent_index: int | None
    resident: bool | None          # None when the record has no data stream
    payload: bytes | None          # resident data
    runs: RunList | None           # non-resident extents
    confidence: str                # "exact" when the name survived
    orphaned: bool = False
    record_offset: int = 0
    attr_walk_corrupt: bool = False

    @property
    def entry_id(self) -> str:
        if self.record_index >= 0:
            return "record-%d" % self.record_index
        return "carved@0x%x" % self.record_offset


@dataclass
class NtfsEntryInfo:
    """A live record, kept for listings and the overwrite map."""

    record_index: int
    name: str
    is_directory: bool
    is_system: bool
    size: int
    clusters: list[int]


@dataclass
class NtfsSurvey:
    live: list[NtfsEntryInfo]
    deleted: list[DeletedNtfsEntry]
    stats: MftScanStats
    live_clusters: set[int]


def _entry_from_record(rec: MftRecord) -> DeletedNtfsEntry | None:
    walk = parse_attributes(rec.data, rec.header)
    if not walk.attributes:
        return None  # a never-used slot: nothing to recover
    std = None
    best_fn = None
    data_attr = None
    for attr in walk.attributes:
        if attr.type_code == ATTR_STANDARD_INFORMATION and attr.resident:
            std = parse_standard_info(attr.value)
        elif attr.type_code == ATTR_FILE_NAME and attr.resident:
            fn = parse_file_name(attr.value)
            if fn is not None and (best_fn is None or best_fn.namespace == 2):
                best_fn = fn
        elif attr.is_unnamed_data and data_attr is None:
            data_attr = attr
    name_known = best_fn is not None
    runs = None
    payload = None
    resident = None
    size = 0
    if data_attr is not None:
        resident = data_attr.resident
        if data_attr.resident:
            payload = data_attr.value
            size = len(payload)
        else:
            try:
                runs = decode_data_runs(data_attr.run_bytes)
            except RunListError:
                runs = RunList([])
            size = data_attr.real_size
    index = rec.header.record_index
    entry = DeletedNtfsEntry(
        record_index=index,
        name=best_fn.name if name_known else (
            "record-%d" % index if index >= 0 else "carved-%x" % rec.offset),
        name_known=name_known,
        is_directory=rec.header.is_directory,
        size=size,
        created=(best_fn.created if name_known else (std.created if std else 0)),
        modified=(best_fn.modified if name_known else (std.modified if std else 0)),
        parent_index=best_fn.parent_index if name_known else None,
        resident=resident,
        payload=payload,
        runs=runs,
        confidence="exact" if name_known else "heuristic",
        orphaned=rec.orphaned,
        record_offset=rec.offset,
        attr_walk_corrupt=walk.corrupt,
    )
    return entry


def survey(img: VolumeImage, desc: VolumeDescriptor,
           deep: bool = False) -> NtfsSurvey:
    """One pass over the volume: live records, deleted candidates,
    the set of clusters claimed by anything still in use."""
    stats = MftScanStats()
    live: list[NtfsEntryInfo] = []
    deleted: list[DeletedNtfsEntry] = []
    live_clusters: set[int] = set()
    known_offsets: set[int] = set()

    for rec in scan_mft(img, desc, stats):
        known_offsets.add(rec.offset)
        if rec.header.base_reference & FILE_REFERENCE_INDEX_MASK:
            continue  # extension record; base record owns the attributes
        if rec.header.in_use:
            walk = parse_attributes(rec.data, rec.header)
            clusters: list[int] = []
            name = ""
            size = 0
            for attr in walk.attributes:
                if not attr.resident:
                    try:
                        clusters.extend(decode_data_runs(attr.run_bytes)
                                        .real_clusters())
                    except RunListError:
                        pass
                if attr.type_code == ATTR_FILE_NAME and attr.resident:
                    fn = parse_file_name(attr.value)
                    if fn is not None and (not name or fn.namespace != 2):
                        name = fn.name
                if attr.is_unnamed_data:
                    size = (len(attr.value) if attr.resident
                            else attr.real_size)
            live_clusters.update(clusters)
            idx = rec.header.record_index
            live.append(NtfsEntryInfo(
                record_index=idx,
                name=name or "record-%d" % idx,
                is_directory=rec.header.is_directory,
                is_system=name.startswith("$") or (idx < 16 and idx != 5),
                size=size,
                clusters=clusters,
            ))
        else:
            entry = _entry_from_record(rec)
            if entry is not None:
                deleted.append(entry)

    if deep:
        skip = set(live_clusters)
        seen_ids = {e.record_offset for e in deleted}
        for rec in carve_records(img, desc, known_offsets, skip, stats):
            if rec.offset in seen_ids:
                continue
            entry = _entry_from_record(rec)
            if entry is not None:
                # Orphaned records are unreachable from the live volume,
                # so they are deleted candidates whatever their flag says.
                entry.orphaned = True
                deleted.append(entry)
    return NtfsSurvey(live=live, deleted=deleted, stats=stats,
                      live_clusters=live_clusters)


def recover_file(img: VolumeImage, desc: VolumeDescriptor,
                 entry: DeletedNtfsEntry, sink=None,
                 live_clusters: set[int] | None = None,
                 allow_same_media: bool = False) -> RecoveredFile:
    """Rebuild a deleted file's content from its record.

    Resident data comes straight out of the record; non-resident data
    follows the run list, substitutes zeros for sparse runs, and stops
    at the volume edge (flagged, confidence downgraded).  The output is
    truncated to the real size so slack never leaks into the result.
    """
    if entry.is_directory:
        raise MftError("record %d is a directory" % entry.record_index)
    _check_sink(img, sink, allow_same_media)

    flags: list[str] = []
    confidence = entry.confidence
    clusters_used: list[int] = []
    if entry.resident is None:
        data = b""
        if entry.size:
            flags.append("no-data-stream")
    elif entry.resident:
        data = entry.payload or b""
    else:
        parts: list[bytes] = []
        cs = desc.cluster_size
        total = desc.total_clusters
        for run in entry.runs.runs:
            if run.lcn is None:
                parts.append(b"\x00" * (run.length * cs))
                continue
            end = run.lcn + run.length
            readable_end = min(end, total)
            if run.lcn >= total:
                flags.append("partial")
                break
            if readable_end < end and "partial" not in flags:
                flags.append("partial")
            span = range(run.lcn, readable_end)
            parts.append(read_clusters(img, desc, span))
            clusters_used.extend(span)
            if readable_end < end:
                break
        data = b"".join(parts)
        if len(data) < entry.size:
            if "partial" not in flags:
                flags.append("truncated")
        data = data[:entry.size]
        if "partial" in flags:
            confidence = "partial"
        if live_clusters and any(c in live_clusters for c in clusters_used):
            flags.append("overwritten-risk")

    digest = hashlib.sha256(data).hexdigest()
    out_path = _write_sink(sink, data)
    return RecoveredFile(
        name=entry.name,
        size=len(data),
        sha256=digest,
        file_class="unknown",
        confidence=confidence,
        source={
            "filesystem": desc.kind.value,
            "entry": entry.entry_id,
            "clusters": cluster_runs(clusters_used),
        },
        flags=flags,
        output_path=out_path,
        data=None if out_path else data,
    )


def _check_sink(img: VolumeImage, sink, allow_same_media: bool) -> None:
    if sink is None or not isinstance(sink, (str, bytes, os.PathLike)):
        return
    if img.path is None or allow_same_media:
        return
    if os.path.realpath(os.fspath(sink)) == os.path.realpath(img.path):
        raise MftError("sink lives on the volume under analysis")


def _write_sink(sink, data: bytes) -> str | None:
    if sink is None:
        return None
    if isinstance(sink, (str, bytes, os.PathLike)):
        path = os.fspath(sink)
        with open(path, "wb") as fh:
            fh.write(data)
        return path
    sink.write(data)
    return getattr(sink, "name", None)
