"""MFT record parsing, run-list decoding, and NTFS recovery."""

import hashlib
import io
import shutil
import struct

import pytest
from hypothesis import given, settings, strategies as st

from remnant import forge
from remnant import ntfs
from remnant.ntfs import (
    ATTR_DATA,
    ATTR_FILE_NAME,
    ATTR_STANDARD_INFORMATION,
    FixupError,
    MftError,
    MftScanStats,
    RunListError,
    apply_fixup,
    decode_data_runs,
    mft_extent,
    parse_attributes,
    parse_record_header,
    recover_file,
    scan_mft,
    survey,
)
from remnant.volume import detect_filesystem, open_image


def _open(path):
    img = open_image(path)
    return img, detect_filesystem(img)


# --------------------------------------------------------------- run lists

def test_decode_single_run():
    # header 0x21: 2-byte offset, 1-byte length; 0x18 clusters at 0x5634
    rl = decode_data_runs(bytes([0x21, 0x18, 0x34, 0x56, 0x00]))
    assert len(rl.runs) == 1
    assert rl.runs[0].length == 24
    assert rl.runs[0].lcn == 22068
    assert rl.total_clusters == 24


def test_decode_terminator_only():
    rl = decode_data_runs(b"\x00")
    assert rl.runs == []
    assert rl.total_clusters == 0


def test_decode_negative_delta_walks_backwards():
    # Second run's offset is a signed delta from the first: 5 - 5 = 0.
    rl = decode_data_runs(bytes([0x11, 0x02, 0x05, 0x11, 0x03, 0xFB, 0x00]))
    assert [(r.length, r.lcn) for r in rl.runs] == [(2, 5), (3, 0)]
    assert rl.real_clusters() == [5, 6, 0, 1, 2]


def test_decode_sparse_run_has_no_lcn():
    # Zero offset width marks a hole in the stream.
    rl = decode_data_runs(bytes([0x11, 0x02, 0x08, 0x01, 0x04, 0x00]))
    assert [(r.length, r.lcn) for r in rl.runs] == [(2, 8), (4, None)]
    assert rl.real_clusters() == [8, 9]
    assert rl.total_clusters == 6


def test_decode_rejects_truncated_input():
    with pytest.raises(RunListError):
        decode_data_runs(bytes([0x21, 0x18]))       # offset bytes missing
    with pytest.raises(RunListError):
        decode_data_runs(bytes([0x21, 0x18, 0x34, 0x56]))  # no terminator
    with pytest.raises(RunListError):
        decode_data_runs(b"")


def test_decode_rejects_zero_length_run():
    with pytest.raises(RunListError):
        decode_data_runs(bytes([0x11, 0x00, 0x05, 0x00]))


_run_lists = st.lists(
    st.tuples(
        st.integers(min_value=1, max_value=1 << 24),            # length
        st.one_of(st.none(),
                  st.integers(min_value=0, max_value=1 << 32)),  # lcn
    ),
    max_size=12,
)


@given(runs=_run_lists)
def test_encode_decode_round_trip(runs):
    raw = forge.encode_data_runs(runs)
    back = decode_data_runs(raw)
    assert [(r.length, r.lcn) for r in back.runs] == runs
    # Re-encoding is bit-exact: widths are canonical minimums.
    assert forge.encode_data_runs(back.runs) == raw


# ---------------------------------------------------------- record headers

def _blank_record(flags=0x0001, index=7):
    buf = bytearray(1024)
    buf[0:4] = b"FILE"
    struct.pack_into("<HH", buf, 0x04, 0x30, 3)        # USA covers 2 sectors
    struct.pack_into("<HHH", buf, 0x10, 1, 1, 0x38)    # seq, links, attrs
    struct.pack_into("<HII", buf, 0x16, flags, 0x40, 1024)
    struct.pack_into("<Q", buf, 0x20, 0)
    struct.pack_into("<I", buf, 0x38, 0xFFFFFFFF)      # end marker
    usn = b"\x99\x00"
    buf[0x30:0x32] = usn
    buf[0x32:0x34] = buf[510:512]
    buf[0x34:0x36] = buf[1022:1024]
    buf[510:512] = usn
    buf[1022:1024] = usn
    return buf


def test_flags_decide_deletion_state():
    live = parse_record_header(bytes(_blank_record(flags=0x0001)), 7)
    assert live.in_use and not live.is_directory
    assert not ntfs.is_deleted(live)

    gone = parse_record_header(bytes(_blank_record(flags=0x0000)), 7)
    assert ntfs.is_deleted(gone) and not gone.is_directory

    gone_dir = parse_record_header(bytes(_blank_record(flags=0x0002)), 7)
    assert ntfs.is_deleted(gone_dir) and gone_dir.is_directory


def test_bad_signature_is_an_error():
    buf = _blank_record()
    buf[0:4] = b"BAAD"
    with pytest.raises(MftError):
        parse_record_header(bytes(buf), 3)


def test_fixup_restores_sector_tails():
    buf = _blank_record()
    apply_fixup(buf)
    assert buf[510:512] == b"\x00\x00"   # original bytes put back
    assert buf[1022:1024] == b"\x00\x00"


def test_fixup_detects_torn_record():
    buf = _blank_record()
    buf[510:512] = b"\xDE\xAD"           # guard disagrees with the USN
    with pytest.raises(FixupError):
        apply_fixup(buf)


def test_attribute_walk_of_empty_record():
    buf = _blank_record()
    apply_fixup(buf)
    hdr = parse_record_header(bytes(buf), 7)
    walk = parse_attributes(bytes(buf), hdr)
    assert walk.attributes == []
    assert not walk.corrupt


# ----------------------------------------------------------- forged layout

def test_std_info_value_sits_at_0x48(base_images):
    """Every forged record puts $STANDARD_INFORMATION first, value at 0x48."""
    path, _ = base_images["ntfs"]
    img, desc = _open(path)
    checked = 0
    with img:
        for rec in scan_mft(img, desc):
            type_code, = struct.unpack_from("<I", rec.data, 0x30)
            if type_code != ATTR_STANDARD_INFORMATION:
                continue
            value_len, = struct.unpack_from("<I", rec.data, 0x30 + 0x10)
            value_off, = struct.unpack_from("<H", rec.data, 0x30 + 0x14)
            assert 0x30 + value_off == 0x48
            assert value_len in (0x30, 0x48)  # short and long forms
            checked += 1
    assert checked >= 12


def test_long_name_pushes_data_attribute_to_0x188(tmp_path):
    name = "x" * 87 + ".txt"            # 91 UTF-16 units in $FILE_NAME
    spec = forge.CorpusSpec(
        filesystem="ntfs", total_size=8 * 1024 * 1024,
        files=[forge.FileSpec(name=name, file_class="document", size=500)])
    img_path = tmp_path / "long.img"
    truth = forge.build_image(spec, img_path)
    rec_off = truth.files[name].entry_offset

    img, desc = _open(img_path)
    with img:
        raw = bytearray(img.read_at(rec_off, desc.mft_record_size))
    apply_fixup(raw)
    # layout: header 0x30, std-info 0x48 long form, then $FILE_NAME of
    # 24 + (0x42 + 2*91) = 272 bytes -> $DATA lands on 0x188 exactly.
    fn_type, = struct.unpack_from("<I", raw, 0x78)
    assert fn_type == ATTR_FILE_NAME
    data_type, = struct.unpack_from("<I", raw, 0x188)
    assert data_type == ATTR_DATA


# ------------------------------------------------------------ whole images

def test_scan_walks_every_mft_slot(base_images):
    path, truth = base_images["ntfs"]
    img, desc = _open(path)
    stats = MftScanStats()
    with img:
        records = list(scan_mft(img, desc, stats))
    assert stats.file_records == len(records)
    assert stats.file_records >= 16 + len(truth.files)  # system + corpus
    assert stats.corrupt == 0
    indexes = [r.header.record_index for r in records]
    assert indexes == sorted(indexes)


def test_zeroed_mft_head_is_fatal(base_images, tmp_path):
    src, _ = base_images["ntfs"]
    broken = tmp_path / "broken.img"
    shutil.copy(src, broken)
    img, desc = _open(src)
    img.close()
    start = desc.mft_lcn * desc.cluster_size
    with open(broken, "r+b") as fh:
        fh.seek(start)
        fh.write(b"\x00" * desc.mft_record_size)
    img2, desc2 = _open(broken)
    with img2:
        with pytest.raises(MftError, match="MFT unreadable"):
            mft_extent(img2, desc2)


def test_torn_record_is_skipped_and_counted(image_copy, base_images):
    path, truth = image_copy("ntfs")
    rec = next(iter(truth.files.values()))
    with open(path, "r+b") as fh:
        fh.seek(rec.entry_offset + 510)
        fh.write(b"\xDE\xAD")            # break the first guard word
    img, desc = _open(path)
    stats = MftScanStats()
    with img:
        records = list(scan_mft(img, desc, stats))
    assert stats.corrupt == 1
    assert rec.entry_offset not in {r.offset for r in records}


def test_live_survey_matches_ground_truth(base_images):
    path, truth = base_images["ntfs"]
    img, desc = _open(path)
    with img:
        surv = survey(img, desc)
    assert surv.deleted == []
    names = {e.name for e in surv.live if not (e.is_system or e.is_directory)}
    assert names == {p.rsplit("/", 1)[-1] for p in truth.files}
    # live files can never be reported as deleted, whatever their content
    assert all(e.record_index not in () for e in surv.live)


def test_deleted_files_recover_byte_identical(image_copy):
    path, truth = image_copy("ntfs", "delete-all")
    img, desc = _open(path)
    with img:
        surv = survey(img, desc)
        by_name = {}
        for e in surv.deleted:
            if not e.is_directory:
                by_name.setdefault(e.name, e)
        for rec in truth.files.values():
            base = rec.path.rsplit("/", 1)[-1]
            assert base in by_name, "missing %s" % base
            entry = by_name[base]
            assert entry.confidence == "exact"  # $FILE_NAME survived
            got = recover_file(img, desc, entry,
                               live_clusters=surv.live_clusters)
            assert got.size == rec.size
            assert got.sha256 == rec.sha256
            assert (entry.resident is True) == bool(rec.resident)


def test_resident_and_nonresident_split_at_truth(image_copy):
    # Small payloads live inside the record; big ones own clusters.
    path, truth = image_copy("ntfs", "delete-all")
    img, desc = _open(path)
    with img:
        surv = survey(img, desc)
    resident = {e.name for e in surv.deleted if e.resident is True}
    for rec in truth.files.values():
        base = rec.path.rsplit("/", 1)[-1]
        if rec.resident:
            assert base in resident
            assert not rec.clusters
        else:
            assert rec.clusters


def test_three_cluster_tail_is_truncated_to_real_size(tmp_path):
    # 10,000 bytes in 4,096-byte clusters: 2 full + 1,808 in the last.
    spec = forge.CorpusSpec(
        filesystem="ntfs", total_size=8 * 1024 * 1024,
        files=[forge.FileSpec(name="REPORT.PDF", file_class="document",
                              size=10_000)])
    img_path = tmp_path / "r.img"
    truth = forge.build_image(spec, img_path)
    rec = truth.files["REPORT.PDF"]
    assert sum(length for _, length in rec.clusters) == 3

    forge.apply_mutation(img_path, "delete", truth=truth, target="REPORT.PDF")
    img, desc = _open(img_path)
    with img:
        surv = survey(img, desc)
        entry = next(e for e in surv.deleted if e.name == "REPORT.PDF")
        assert entry.runs.total_clusters == 3
        sink = io.BytesIO()
        got = recover_file(img, desc, entry, sink=sink,
                           live_clusters=surv.live_clusters)
    assert len(sink.getvalue()) == 10_000
    assert got.sha256 == rec.sha256
    assert hashlib.sha256(sink.getvalue()).hexdigest() == rec.sha256


def test_record_without_file_name_gets_placeholder(image_copy):
    path, truth = image_copy("ntfs", "delete-all")
    rec = next(iter(truth.files.values()))
    img, desc = _open(path)
    with img:
        raw = bytearray(img.read_at(rec.entry_offset, desc.mft_record_size))
    img.close()
    apply_fixup(raw)
    # Overwrite the $FILE_NAME type code with a bogus one so the walk
    # still terminates but the name is gone.
    fn_off = 0x78
    type_code, = struct.unpack_from("<I", raw, fn_off)
    assert type_code == ATTR_FILE_NAME
    struct.pack_into("<I", raw, fn_off, 0x20)   # unused attribute type

    hdr = parse_record_header(bytes(raw), rec.record_index)
    entry = ntfs._entry_from_record(
        ntfs.MftRecord(header=hdr, data=bytes(raw), offset=rec.entry_offset))
    assert not entry.name_known
    assert entry.name == "record-%d" % rec.record_index
    assert entry.confidence == "heuristic"


def test_reused_clusters_flag_overwritten_risk(tmp_path):
    # Delete BIG.BIN, then land NEW.BIN on its clusters: recovery of the
    # stale record must admit the content is at risk.
    spec = forge.CorpusSpec(
        filesystem="ntfs", total_size=8 * 1024 * 1024,
        files=[forge.FileSpec(name="BIG.BIN", file_class="video",
                              size=40_000, seed=1)])
    img_path = tmp_path / "o.img"
    truth = forge.build_image(spec, img_path)
    forge.apply_mutation(img_path, "delete", truth=truth, target="BIG.BIN")
    forge.add_file(img_path, "NEW.BIN", b"\xA5" * 40_000)

    img, desc = _open(img_path)
    with img:
        surv = survey(img, desc)
        entry = next(e for e in surv.deleted if e.name == "BIG.BIN")
        got = recover_file(img, desc, entry,
                           live_clusters=surv.live_clusters)
    assert "overwritten-risk" in got.flags
    # The run list itself is still certain -- the record preserves it --
    # so confidence stays "exact"; the flag carries the content doubt.
    assert got.confidence == "exact"
    assert got.sha256 != truth.files["BIG.BIN"].sha256


def test_sink_and_buffer_agree(image_copy, tmp_path):
    path, truth = image_copy("ntfs", "delete-all")
    img, desc = _open(path)
    with img:
        surv = survey(img, desc)
        entry = next(e for e in surv.deleted
                     if not e.is_directory and e.resident is False)
        buffered = recover_file(img, desc, entry,
                                live_clusters=surv.live_clusters)
        sink = io.BytesIO()
        streamed = recover_file(img, desc, entry, sink=sink,
                                live_clusters=surv.live_clusters)
    assert buffered.data == sink.getvalue()
    assert streamed.output_path is None   # a stream sink has no path
    assert buffered.sha256 == streamed.sha256
