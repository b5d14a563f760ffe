#!/usr/bin/env python3
"""Generate and validate the checked-in JPEG, RAR and PE donor fixtures.

JPEG files come from Pillow. RAR (v4, stored entries) and PE32 files are
assembled by hand and then checked with `rarfile` and `pefile`.

    python3 tools/make_fixtures.py [--count N] [--out crates/core/fixtures]
"""

import argparse
import io
import random
import struct
import zlib
from pathlib import Path

WORDS = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo lima "
    "mike november oscar papa quebec romeo sierra tango uniform victor whiskey "
    "xray yankee zulu amber basil cedar dune ember fern grove heath iris jade "
    "kelp lotus maple nectar olive pearl quartz reed sage thistle umber vale"
).split()


def words(rng, n):
    return " ".join(rng.choice(WORDS) for _ in range(n))


# ---------------------------------------------------------------- JPEG


def make_jpeg(rng):
    from PIL import Image, ImageDraw

    w, h = rng.randint(8, 48), rng.randint(8, 48)
    mode = "L" if rng.random() < 0.2 else "RGB"
    base = tuple(rng.randint(0, 255) for _ in range(3))
    img = Image.new("RGB", (w, h), base)
    draw = ImageDraw.Draw(img)
    for _ in range(rng.randint(1, 6)):
        x0, y0 = rng.randint(0, w - 1), rng.randint(0, h - 1)
        x1, y1 = rng.randint(x0, w), rng.randint(y0, h)
        color = tuple(rng.randint(0, 255) for _ in range(3))
        if rng.random() < 0.5:
            draw.rectangle([x0, y0, x1, y1], fill=color)
        else:
            draw.ellipse([x0, y0, x1, y1], fill=color)
    if mode == "L":
        img = img.convert("L")
    buf = io.BytesIO()
    img.save(
        buf,
        format="JPEG",
        quality=rng.randint(40, 95),
        progressive=rng.random() < 0.15,
    )
    data = buf.getvalue()
    Image.open(io.BytesIO(data)).load()
    return data


# ---------------------------------------------------------------- RAR v4


def rar_block(head_type, flags, body):
    size = 7 + len(body)
    rest = struct.pack("<BHH", head_type, flags, size) + body
    crc = zlib.crc32(rest) & 0xFFFF
    return struct.pack("<H", crc) + rest


def make_rar(rng):
    out = bytearray(b"Rar!\x1a\x07\x00")
    out += rar_block(0x73, 0x0000, b"\x00" * 6)
    for i in range(rng.randint(1, 3)):
        if rng.random() < 0.5:
            payload = (words(rng, rng.randint(10, 120)) + "\n").encode()
            name = f"{rng.choice(WORDS)}_{i}.txt".encode()
        else:
            payload = bytes(rng.randint(0, 255) for _ in range(rng.randint(32, 800)))
            name = f"{rng.choice(WORDS)}_{i}.dat".encode()
        body = struct.pack(
            "<IIBIIBBHI",
            len(payload),
            len(payload),
            2,
            zlib.crc32(payload),
            0x5A2B3C4D,
            20,
            0x30,
            len(name),
            0x20,
        )
        out += rar_block(0x74, 0x8000, body + name)
        out += payload
    out += rar_block(0x7B, 0x4000, b"")
    return bytes(out)


def check_rar(data):
    import rarfile

    with rarfile.RarFile(io.BytesIO(data)) as rf:
        infos = rf.infolist()
        assert infos, "empty rar"
        for info in infos:
            assert info.compress_type == rarfile.RAR_M0
            assert rf.read(info) is not None


# ---------------------------------------------------------------- PE32


def align(n, a):
    return (n + a - 1) // a * a


def make_pe(rng):
    file_align, sect_align = 0x200, 0x1000
    e_lfanew = 0x80
    names = [b".text", b".rdata", b".data"][: rng.randint(1, 3)]
    bodies = []
    for name in names:
        if name == b".text":
            code = bytearray()
            for _ in range(rng.randint(40, 400)):
                code += rng.choice(
                    [b"\x55", b"\x89\xe5", b"\x31\xc0", b"\x90", b"\xc3", b"\x83\xec\x10", b"\x5d"]
                )
            bodies.append(bytes(code))
        else:
            bodies.append((words(rng, rng.randint(5, 80)) + "\x00").encode())
    n = len(names)
    headers_size = align(e_lfanew + 4 + 20 + 224 + 40 * n, file_align)

    dos = bytearray(e_lfanew)
    dos[0:2] = b"MZ"
    struct.pack_into("<H", dos, 2, 0x90)
    struct.pack_into("<I", dos, 0x3C, e_lfanew)
    stub = b"\x0e\x1f\xba\x0e\x00\xb4\x09\xcd\x21\xb8\x01\x4c\xcd\x21This program cannot be run in DOS mode.\r\r\n$"
    dos[0x40 : 0x40 + len(stub)] = stub

    raw_ptr = headers_size
    sections = []
    rva = sect_align
    for name, body in zip(names, bodies):
        raw_size = align(len(body), file_align)
        sections.append((name, len(body), rva, raw_size, raw_ptr, body))
        raw_ptr += raw_size
        rva += align(len(body), sect_align)
    size_of_image = rva

    coff = struct.pack("<HHIIIHH", 0x14C, n, rng.randint(0x50000000, 0x60000000), 0, 0, 224, 0x0102)
    code_size = sections[0][3]
    opt = struct.pack(
        "<HBBIIIIIIIIIHHHHHHIIIIHHIIIIII",
        0x10B, 14, 0, code_size, 0, 0, sect_align, sect_align, 0,
        0x400000, sect_align, file_align, 6, 0, 0, 0, 6, 0, 0,
        size_of_image, headers_size, 0, rng.choice([2, 3]), 0x8140,
        0x100000, 0x1000, 0x100000, 0x1000, 0, 16,
    )
    opt += b"\x00" * (16 * 8)
    assert len(opt) == 224
    table = b""
    for name, vsize, srva, raw_size, ptr, _ in sections:
        chars = 0x60000020 if name == b".text" else (0x40000040 if name == b".rdata" else 0xC0000040)
        table += struct.pack("<8sIIIIIIHHI", name, vsize, srva, raw_size, ptr, 0, 0, 0, 0, chars)
    head = bytes(dos) + b"PE\x00\x00" + coff + opt + table
    out = bytearray(head.ljust(headers_size, b"\x00"))
    for _, _, _, raw_size, _, body in sections:
        out += body.ljust(raw_size, b"\x00")
    return bytes(out)


def check_pe(data):
    import pefile

    pe = pefile.PE(data=data)
    assert pe.FILE_HEADER.Machine == 0x14C
    assert len(pe.sections) == pe.FILE_HEADER.NumberOfSections


# ----------------------------------------------------------------


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--seed", type=int, default=20240611)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "crates/core/fixtures"))
    args = ap.parse_args()
    out = Path(args.out)
    for kind, ext, make, check in (
        ("jpeg", "jpg", make_jpeg, None),
        ("rar", "rar", make_rar, check_rar),
        ("pe", "exe", make_pe, check_pe),
    ):
        rng = random.Random(f"{args.seed}-{kind}")
        d = out / kind
        d.mkdir(parents=True, exist_ok=True)
        seen = set()
        i = 0
        while i < args.count:
            data = make(rng)
            if data in seen:
                continue
            seen.add(data)
            if check is not None:
                check(data)
            (d / f"{kind}_{i:03}.{ext}").write_bytes(data)
            i += 1
        print(f"{kind}: {args.count} files in {d}")


if __name__ == "__main__":
    main()
