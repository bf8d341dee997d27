/**
 * CCEMB1 binary format: a keyed store of dense float32 vectors.
 *
 * Layout (little-endian throughout):
 *   magic   6 bytes  ASCII "CCEMB1"
 *   count   u64      number of records
 *   dim     u32      vector length
 *   records, each:
 *     keyLen u32
 *     key    keyLen bytes of UTF-8
 *     vector dim * f32
 */

export const CCEMB_MAGIC = "CCEMB1";

export interface EmbeddingRecord {
  key: string;
  vector: Float32Array;
}

export function encodeEmbeddingFile(dim: number, records: EmbeddingRecord[]): Buffer {
  const chunks: Buffer[] = [];
  const header = Buffer.alloc(6 + 8 + 4);
  header.write(CCEMB_MAGIC, 0, "ascii");
  header.writeBigUInt64LE(BigInt(records.length), 6);
  header.writeUInt32LE(dim, 14);
  chunks.push(header);
  for (const { key, vector } of records) {
    if (vector.length !== dim) {
      throw new Error(
        `vector for ${JSON.stringify(key)} has length ${vector.length}, want ${dim}`,
      );
    }
    const keyBytes = Buffer.from(key, "utf-8");
    const len = Buffer.alloc(4);
    len.writeUInt32LE(keyBytes.length, 0);
    chunks.push(len, keyBytes);
    const values = Buffer.alloc(4 * dim);
    for (let i = 0; i < dim; i++) {
      values.writeFloatLE(vector[i], 4 * i);
    }
    chunks.push(values);
  }
  return Buffer.concat(chunks);
}

export function decodeEmbeddingFile(data: Buffer): { dim: number; records: EmbeddingRecord[] } {
  if (data.length < 18 || data.toString("ascii", 0, 6) !== CCEMB_MAGIC) {
    throw new Error("not an embedding file (bad magic)");
  }
  const count = Number(data.readBigUInt64LE(6));
  const dim = data.readUInt32LE(14);
  let offset = 18;
  const records: EmbeddingRecord[] = [];
  const seen = new Set<string>();
  for (let r = 0; r < count; r++) {
    if (offset + 4 > data.length) throw new Error("truncated file");
    const keyLen = data.readUInt32LE(offset);
    offset += 4;
    if (offset + keyLen + 4 * dim > data.length) throw new Error("truncated file");
    const key = data.toString("utf-8", offset, offset + keyLen);
    offset += keyLen;
    if (seen.has(key)) throw new Error(`duplicate key ${JSON.stringify(key)}`);
    seen.add(key);
    const vector = new Float32Array(dim);
    for (let i = 0; i < dim; i++) {
      vector[i] = data.readFloatLE(offset + 4 * i);
    }
    offset += 4 * dim;
    records.push({ key, vector });
  }
  if (offset !== data.length) throw new Error("trailing bytes after records");
  return { dim, records };
}
