/**
 * Tensor-archive (.bpta) reader/writer.
 *
 * Layout: magic "BPTA" | format version (u32 LE) | header length (u64 LE) |
 * UTF-8 JSON header {name: {dtype, shape, offset, byte_len}} | concatenated
 * little-endian row-major payloads | CRC32 of the payload region (u32 LE).
 */

export const MAGIC = Buffer.from('BPTA', 'ascii');
export const FORMAT_VERSION = 1;

export type DType = 'f32' | 'f64';

export interface TensorEntry {
  dtype: DType;
  shape: number[];
  data: Float32Array | Float64Array;
}

interface HeaderEntry {
  dtype: DType;
  shape: number[];
  offset: number;
  byte_len: number;
}

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(buf: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < buf.length; i++) {
    c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function elementSize(dtype: DType): number {
  return dtype === 'f32' ? 4 : 8;
}

function toLittleEndianBytes(entry: TensorEntry): Buffer {
  const size = elementSize(entry.dtype);
  const out = Buffer.alloc(entry.data.length * size);
  const view = new DataView(out.buffer, out.byteOffset, out.byteLength);
  for (let i = 0; i < entry.data.length; i++) {
    if (entry.dtype === 'f32') view.setFloat32(i * 4, entry.data[i], true);
    else view.setFloat64(i * 8, entry.data[i], true);
  }
  return out;
}

/** Serialize tensors (names stored sorted, matching the reference writer). */
export function encodeArchive(tensors: Map<string, TensorEntry>): Buffer {
  const names = [...tensors.keys()].sort();
  const header: Record<string, HeaderEntry> = {};
  const chunks: Buffer[] = [];
  let offset = 0;
  for (const name of names) {
    const entry = tensors.get(name)!;
    const count = entry.shape.reduce((a, b) => a * b, 1);
    if (count !== entry.data.length) {
      throw new Error(`${name}: shape ${JSON.stringify(entry.shape)} does not match data length ${entry.data.length}`);
    }
    const raw = toLittleEndianBytes(entry);
    header[name] = { dtype: entry.dtype, shape: entry.shape, offset, byte_len: raw.length };
    chunks.push(raw);
    offset += raw.length;
  }
  const headerJson = Buffer.from(JSON.stringify(header), 'utf-8');
  const payload = Buffer.concat(chunks);
  const head = Buffer.alloc(16);
  MAGIC.copy(head, 0);
  head.writeUInt32LE(FORMAT_VERSION, 4);
  head.writeBigUInt64LE(BigInt(headerJson.length), 8);
  const crc = Buffer.alloc(4);
  crc.writeUInt32LE(crc32(payload), 0);
  return Buffer.concat([head, headerJson, payload, crc]);
}

export function decodeArchive(blob: Buffer): Map<string, TensorEntry> {
  if (blob.length < 20 || !blob.subarray(0, 4).equals(MAGIC)) {
    throw new Error('not a tensor archive (bad magic)');
  }
  const version = blob.readUInt32LE(4);
  if (version !== FORMAT_VERSION) {
    throw new Error(`unsupported format version ${version}`);
  }
  const headerLen = Number(blob.readBigUInt64LE(8));
  const headerEnd = 16 + headerLen;
  if (blob.length < headerEnd + 4) {
    throw new Error('file truncated');
  }
  const header = JSON.parse(blob.subarray(16, headerEnd).toString('utf-8')) as Record<string, HeaderEntry>;
  const payload = blob.subarray(headerEnd, blob.length - 4);
  const stored = blob.readUInt32LE(blob.length - 4);
  if (crc32(payload) !== stored) {
    throw new Error('payload CRC mismatch');
  }
  const out = new Map<string, TensorEntry>();
  for (const [name, meta] of Object.entries(header)) {
    const size = elementSize(meta.dtype);
    const count = meta.byte_len / size;
    const view = new DataView(payload.buffer, payload.byteOffset + meta.offset, meta.byte_len);
    const data = meta.dtype === 'f32' ? new Float32Array(count) : new Float64Array(count);
    for (let i = 0; i < count; i++) {
      data[i] = meta.dtype === 'f32' ? view.getFloat32(i * 4, true) : view.getFloat64(i * 8, true);
    }
    out.set(name, { dtype: meta.dtype, shape: meta.shape, data });
  }
  return out;
}
