"""Regenerate fixtures/wire/*.hex and their expected-parse JSON files."""

import hashlib
import json
import struct
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "fixtures" / "wire"
MAGIC = bytes.fromhex("f9beb4d9")


def dsha4(payload: bytes) -> bytes:
    return hashlib.sha256(hashlib.sha256(payload).digest()).digest()[:4]


def frame(command: str, payload: bytes, stale_checksum: bool = False) -> bytes:
    csum = dsha4(payload)
    if stale_checksum:
        csum = bytes([csum[0] ^ 0xFF]) + csum[1:]
    return MAGIC + command.encode().ljust(12, b"\x00") + struct.pack("<I", len(payload)) + csum + payload


def inventory(items):
    payload = struct.pack("<B", len(items))
    for t, h in items:
        payload += struct.pack("<I", t) + h
    return payload


def emit(name: str, raw: bytes, meta: dict) -> None:
    (OUT / f"{name}.hex").write_text(raw.hex() + "\n")
    meta = dict(meta, payload_length=len(raw) - 24, checksum=raw[20:24].hex())
    (OUT / f"{name}.json").write_text(json.dumps(meta, indent=2) + "\n")


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    h_block = hashlib.sha256(b"block-42").digest()
    h_tx = hashlib.sha256(b"tx-123").digest()

    raw = frame("getdata", inventory([(2, h_block)]))
    emit("getdata_block", raw, {"command": "getdata", "checksum_ok": True,
                                "inventory": [[2, h_block.hex()]]})

    raw = frame("inv", inventory([(2, h_block), (1, h_tx)]))
    emit("inv_block_and_tx", raw, {"command": "inv", "checksum_ok": True,
                                   "inventory": [[2, h_block.hex()], [1, h_tx.hex()]]})

    raw = frame("block", b"\x01" * 80 + h_block)
    emit("block_small", raw, {"command": "block", "checksum_ok": True})

    raw = frame("block", b"\x01" * 80 + h_block, stale_checksum=True)
    emit("block_corrupted", raw, {"command": "block", "checksum_ok": False})

    raw = frame("verack", b"")
    emit("verack_empty", raw, {"command": "verack", "checksum_ok": True})
    print(f"wrote {len(list(OUT.glob('*.hex')))} fixtures to {OUT}")


if __name__ == "__main__":
    main()
