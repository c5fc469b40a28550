from .buffers import (
    DEFAULT_BATCH_SIZE,
    BufBatch,
    BufferPool,
    FieldModifier,
    Offload,
    PacketBuffer,
    PacketTemplate,
    alloc_batch,
    apply_checksums,
    apply_modifier,
    filler_frame,
    l4_checksum,
    make_template,
    materialize,
)
from .checksum import crc32_fcs, fcs_residue, fcs_valid, ipv4_checksum, ones_complement_sum
