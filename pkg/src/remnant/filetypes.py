"""File-class identification by magic bytes, with extension fallback.

The six classes mirror the corpus the forge writes: document, image,
audio, video, compressed, executable.  Anything else is "unknown".
"""

from __future__ import annotations

CLASSES = ("document", "image", "audio", "video", "compressed", "executable")

# Longest prefixes first so e.g. gzip does not shadow a longer match.
MAGIC_TABLE = (
    (b"%PDF", "document"),
    (b"{\\rtf", "document"),
    (b"\xff\xd8\xff", "image"),          # JPEG SOI
    (b"\x89PNG\r\n\x1a\n", "image"),
    (b"GIF87a", "image"),
    (b"GIF89a", "image"),
    (b"BM", "image"),                    # BMP (kept late: 2-byte prefix)
    (b"ID3", "audio"),                   # MP3 with ID3 tag
    (b"\xff\xfb", "audio"),              # bare MPEG audio frame
    (b"OggS", "audio"),
    (b"fLaC", "audio"),
    (b"\x1a\x45\xdf\xa3", "video"),      # Matroska/WebM EBML
    (b"\x00\x00\x00\x18ftyp", "video"),
    (b"\x00\x00\x00\x20ftyp", "video"),
    (b"PK\x03\x04", "compressed"),       # ZIP local file header
    (b"\x1f\x8b", "compressed"),         # gzip
    (b"7z\xbc\xaf\x27\x1c", "compressed"),
    (b"BZh", "compressed"),
    (b"\xfd7zXZ\x00", "compressed"),
    (b"\x7fELF", "executable"),
    (b"MZ", "executable"),
)

EXTENSION_TABLE = {
    "txt": "document", "pdf": "document", "doc": "document",
    "docx": "document", "rtf": "document", "md": "document",
    "jpg": "image", "jpeg": "image", "png": "image", "gif": "image",
    "bmp": "image",
    "mp3": "audio", "wav": "audio", "ogg": "audio", "flac": "audio",
    "mp4": "video", "mkv": "video", "avi": "video", "webm": "video",
    "zip": "compressed", "gz": "compressed", "7z": "compressed",
    "bz2": "compressed", "xz": "compressed", "rar": "compressed",
    "exe": "executable", "dll": "executable", "elf": "executable",
    "bin": "executable", "so": "executable",
}

# Order matters: "BM" would shadow nothing but is so short that longer
# magics must win.  Sort once, longest first.
_ORDERED = sorted(MAGIC_TABLE, key=lambda t: -len(t[0]))


def classify_bytes(data: bytes) -> str | None:
    """Return the class the leading magic bytes announce, else None."""
    for magic, cls in _ORDERED:
        if data.startswith(magic):
            return cls
    return None


def classify(data: bytes, name: str = "") -> str:
    """Classify content, consulting the file extension only when the
    payload itself is inconclusive (too short or magic-free)."""
    cls = classify_bytes(data)
    if cls is not None:
        return cls
    ext = name.rsplit(".", 1)[-1].lower() if "." in name else ""
    return EXTENSION_TABLE.get(ext, "unknown")


def magic_for(cls: str) -> bytes:
    """The canonical magic prefix the forge stamps on a class."""
    table = {
        "document": b"%PDF-1.4\n",
        "image": b"\xff\xd8\xff\xe0\x00\x10JFIF\x00",
        "audio": b"ID3\x04\x00\x00\x00",
        "video": b"\x1a\x45\xdf\xa3\x01\x00\x00\x00",
        "compressed": b"PK\x03\x04\x14\x00",
        "executable": b"\x7fELF\x02\x01\x01\x00",
    }
    if cls not in table:
        raise KeyError("unknown file class %r" % cls)
    return table[cls]
