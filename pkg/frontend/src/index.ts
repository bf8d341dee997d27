export { Encoder, DeterministicEncoder, loadEncoder, tokenize } from "./encoder.js";
export { meanPoolLastFour, POOLING_TAG, POOLED_LAYERS } from "./pooling.js";
export {
  CCEMB_MAGIC,
  EmbeddingRecord,
  encodeEmbeddingFile,
  decodeEmbeddingFile,
} from "./ccemb.js";
export { exportEmbeddings, ExportManifest, ExportResult } from "./export.js";
