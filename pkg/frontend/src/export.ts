/**
 * One-shot export: texts -> pooled vectors -> CCEMB1 bytes + manifest.
 */

import { createHash } from "node:crypto";

import { encodeEmbeddingFile, EmbeddingRecord } from "./ccemb.js";
import { Encoder } from "./encoder.js";
import { meanPoolLastFour, POOLING_TAG, POOLED_LAYERS } from "./pooling.js";

export interface ExportManifest {
  encoder_name: string;
  pooling: typeof POOLING_TAG;
  dim: number;
  text_count: number;
  sha256: string;
  /** Auditable pooling choices: special tokens are part of the token mean. */
  notes: string;
}

export interface ExportResult {
  bytes: Buffer;
  manifest: ExportManifest;
  records: EmbeddingRecord[];
}

export function exportEmbeddings(texts: string[], encoder: Encoder): ExportResult {
  const seen = new Set<string>();
  for (const text of texts) {
    if (seen.has(text)) {
      throw new Error(`duplicate input text ${JSON.stringify(text)}`);
    }
    seen.add(text);
  }
  const dim = POOLED_LAYERS * encoder.hiddenSize;
  const records: EmbeddingRecord[] = texts.map((text) => ({
    key: text,
    vector: meanPoolLastFour(encoder.encode(text)),
  }));
  const bytes = encodeEmbeddingFile(dim, records);
  const manifest: ExportManifest = {
    encoder_name: encoder.name,
    pooling: POOLING_TAG,
    dim,
    text_count: texts.length,
    sha256: createHash("sha256").update(bytes).digest("hex"),
    notes:
      "per layer: mean over all token positions including sentinel tokens; " +
      "the 4 pooled layer vectors are concatenated deepest-last",
  };
  return { bytes, manifest, records };
}
