/**
 * Deterministic dual-encoder embedding backend ("builtin-v1").
 *
 * Patch descriptors and text tokens are projected into a shared 64-d space
 * with fixed weights derived from an integer PRNG, so the same inputs
 * produce byte-identical embeddings on every run and platform. The
 * interface mirrors heavyweight pretrained image-text encoders; swapping
 * one in only requires replacing `encodePatch` / `encodeText` and bumping
 * MODEL_ID.
 */

export const MODEL_ID = "builtin-v1";
export const EMBED_DIM = 64;
export const DESCRIPTOR_DIM = 19; // 18 patch statistics + constant bias

/** mulberry32: tiny deterministic PRNG over uint32 state. */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193);
  }
  return hash >>> 0;
}

function l2Normalize(v: Float64Array): Float64Array {
  let norm = 0;
  for (const x of v) norm += x * x;
  norm = Math.sqrt(norm);
  if (norm < 1e-12) {
    throw new Error("cannot normalize a zero embedding");
  }
  const out = new Float64Array(v.length);
  for (let i = 0; i < v.length; i++) out[i] = v[i] / norm;
  return out;
}

/** Fixed projection from descriptor space into the shared embedding space. */
const PROJECTION: Float64Array = (() => {
  const rand = mulberry32(0xc0ffee);
  const weights = new Float64Array(EMBED_DIM * DESCRIPTOR_DIM);
  for (let i = 0; i < weights.length; i++) {
    weights[i] = 2 * rand() - 1;
  }
  return weights;
})();

export function encodePatch(descriptor: Float64Array): Float64Array {
  if (descriptor.length !== DESCRIPTOR_DIM) {
    throw new Error(
      `descriptor has ${descriptor.length} entries, model expects ${DESCRIPTOR_DIM}`,
    );
  }
  const out = new Float64Array(EMBED_DIM);
  for (let row = 0; row < EMBED_DIM; row++) {
    let acc = 0;
    const base = row * DESCRIPTOR_DIM;
    for (let col = 0; col < DESCRIPTOR_DIM; col++) {
      acc += PROJECTION[base + col] * descriptor[col];
    }
    out[row] = acc;
  }
  return l2Normalize(out);
}

/** Token embeddings are PRNG streams keyed by the token hash, averaged. */
export function encodeText(text: string): Float64Array {
  const tokens = text.toLowerCase().split(/[^a-z0-9]+/).filter(Boolean);
  if (tokens.length === 0) {
    throw new Error("text prompt has no tokens");
  }
  const sum = new Float64Array(EMBED_DIM);
  for (const token of tokens) {
    const rand = mulberry32(fnv1a(token));
    for (let i = 0; i < EMBED_DIM; i++) {
      sum[i] += 2 * rand() - 1;
    }
  }
  for (let i = 0; i < EMBED_DIM; i++) sum[i] /= tokens.length;
  return l2Normalize(sum);
}

export function cosine(a: Float64Array, b: Float64Array): number {
  let dot = 0;
  for (let i = 0; i < a.length; i++) dot += a[i] * b[i];
  return dot;
}
