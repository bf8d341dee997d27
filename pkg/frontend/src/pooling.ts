/**
 * Pooling of encoder hidden states into a single fixed-width vector.
 *
 * "concat-mean-last4": take the last 4 layers, average over token
 * positions within each layer (special tokens included), and concatenate
 * the 4 pooled vectors in layer order.  A hidden size of 768 therefore
 * yields 3072 output dimensions.
 */

export const POOLING_TAG = "concat-mean-last4";
export const POOLED_LAYERS = 4;

export function meanPoolLastFour(layers: Float32Array[][]): Float32Array {
  if (layers.length < POOLED_LAYERS) {
    throw new Error(
      `need at least ${POOLED_LAYERS} layers, encoder produced ${layers.length}`,
    );
  }
  const lastFour = layers.slice(layers.length - POOLED_LAYERS);
  const hidden = lastFour[0][0].length;
  const out = new Float32Array(POOLED_LAYERS * hidden);
  lastFour.forEach((states, block) => {
    const acc = new Float64Array(hidden);
    for (const state of states) {
      if (state.length !== hidden) {
        throw new Error("inconsistent hidden sizes across tokens");
      }
      for (let i = 0; i < hidden; i++) {
        acc[i] += state[i];
      }
    }
    const offset = block * hidden;
    for (let i = 0; i < hidden; i++) {
      out[offset + i] = acc[i] / states.length;
    }
  });
  return out;
}
