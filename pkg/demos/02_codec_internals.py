# %% [markdown]
# # Inside the container
#
# The pieces that turn quantized attributes into bytes: the Morton curve
# used to order Gaussians, the position stream, canonical Huffman codes for
# codebook indices, and the checksummed stream layout.

# %%
import lzma

import numpy as np

from splatzip.codec.container import SceneParts, pack_payload, unpack
from splatzip.codec.huffman import canonical_codes, code_lengths, encode_stream
from splatzip.codec.positions import encode_positions, quantize_positions
from splatzip.importance import morton_keys
from splatzip.field import FieldArch, FieldWeights
from splatzip.svq import GROUP_DIMS, GROUPS, SvqCodebookSet, SvqConfig, SvqGroup, to_half

rng = np.random.default_rng(0)

# %% [markdown]
# ## Morton order
#
# Interleaving coordinate bits (x lowest) walks a 2x2x2 grid in this order.

# %%
corners = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=np.uint64)
for c, k in zip(corners, morton_keys(corners)):
    print(c.tolist(), "->", int(k))

# %% [markdown]
# ## Position stream
#
# Clustered points quantized to 16 bits per axis. Sorting along the curve
# makes consecutive deltas small, so most fit in one or two varint bytes.

# %%
aabb = np.array([[-1.0] * 3, [1.0] * 3])
centers = rng.uniform(-0.8, 0.8, (30, 3))
pts = np.clip(centers[rng.integers(0, 30, 50_000)] + rng.normal(0, 0.02, (50_000, 3)), -1, 1)
buf, order = encode_positions(quantize_positions(pts, aabb))
print(f"raw 6 B/point, stream {len(buf) / len(pts):.2f} B/point, after xz "
      f"{len(lzma.compress(buf, preset=9)) / len(pts):.2f} B/point")

# %% [markdown]
# ## Canonical Huffman
#
# Only code lengths are stored. Codes follow from sorting symbols by
# (length, symbol).

# %%
sym = rng.choice(4, size=1000, p=[0.6, 0.25, 0.1, 0.05])
lengths = code_lengths(np.bincount(sym))
for s, (ln, code) in enumerate(zip(lengths, canonical_codes(lengths))):
    print(f"symbol {s}: length {ln}, code {int(code):0{ln}b}")
print(f"{len(encode_stream(sym, 4))} bytes vs {len(sym) * 2 // 8} bytes at 2 bits fixed width (plus table)")

# %% [markdown]
# ## Stream table
#
# A container with random indices: one Huffman stream per partition, one
# codebook per partition, the position stream and the field weights.

# %%
n = 1000
codes = SvqCodebookSet()
for g in GROUPS:
    gc = SvqConfig().group(g)
    m = gc.partitions(GROUP_DIMS[g])
    books = [to_half(rng.normal(size=(gc.codes_per_book, gc.sub_vector_length))) for _ in range(m)]
    codes.groups[g] = SvqGroup(gc, books, rng.integers(0, gc.codes_per_book, (n, m)))
parts = SceneParts(aabb, rng.integers(0, 65536, (n, 3)).astype(np.uint16),
                   FieldWeights.init(FieldArch(), aabb, rng).to_half(), codes, None, {})
payload, layout = pack_payload(parts)
print(f"header {layout.header_bytes} B, crc {layout.crc_bytes} B, payload {layout.payload_bytes} B")
for s in layout.streams:
    print(f"  stream 0x{s.stream_id:02x} {s.component:<10} {s.length:7d} B")

# %% [markdown]
# Flipping one payload byte is caught by the CRC before anything is decoded.

# %%
bad = bytearray(payload)
bad[100] ^= 1
try:
    unpack(lzma.compress(bytes(bad), format=lzma.FORMAT_XZ))
except Exception as e:
    print(type(e).__name__, e)
