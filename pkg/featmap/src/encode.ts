/**
 * Response-map computation: per-patch embeddings against a text embedding,
 * cosine similarity, min-max normalization, shared-schema output.
 */

import { readFileSync } from "node:fs";
import { loadImage, patchDescriptors } from "./image.js";
import { MODEL_ID, cosine, encodePatch, encodeText } from "./model.js";
import { pointsFileSchema, responseMapSchema, type ResponseMapFile } from "./schema.js";

export interface EncodeOptions {
  imagePath: string;
  text: string;
  pointsPath?: string;
  grid: number;
  /** Identifier recorded in the output metadata; defaults to the file path. */
  imageId?: string;
}

export function encode(options: EncodeOptions): ResponseMapFile {
  const image = loadImage(options.imagePath);
  const grid = options.grid;
  const descriptors = patchDescriptors(image, grid, grid);
  const textEmbedding = encodeText(options.text);
  const raw = descriptors.map((d) => cosine(encodePatch(d), textEmbedding));
  let rawMin = Infinity;
  let rawMax = -Infinity;
  for (const v of raw) {
    if (v < rawMin) rawMin = v;
    if (v > rawMax) rawMax = v;
  }
  const spread = rawMax - rawMin;
  // Degenerate (near-uniform) maps have no ordering to preserve; emit the
  // midpoint and let meta.raw_min/raw_max record the degeneracy.
  const values =
    spread < 1e-12 ? raw.map(() => 0.5) : raw.map((v) => (v - rawMin) / spread);

  let points: (readonly [number, number, number] | null)[];
  if (options.pointsPath) {
    const doc = pointsFileSchema.parse(JSON.parse(readFileSync(options.pointsPath, "utf-8")));
    if (doc.h !== grid || doc.w !== grid) {
      throw new Error(
        `points file grid ${doc.w}x${doc.h} does not match the ${grid}x${grid} patch grid`,
      );
    }
    points = doc.points;
  } else {
    points = new Array(grid * grid).fill(null);
  }

  const out: ResponseMapFile = {
    h: grid,
    w: grid,
    values,
    points: points as ResponseMapFile["points"],
    meta: {
      text: options.text,
      image: options.imageId ?? options.imagePath,
      model: MODEL_ID,
      similarity: "cosine-minmax",
      raw_min: rawMin,
      raw_max: rawMax,
    },
  };
  return responseMapSchema.parse(out);
}

export function serialize(map: ResponseMapFile): string {
  return JSON.stringify(map) + "\n";
}
