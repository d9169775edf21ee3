/**
 * Image loading (PNG or binary PPM) and patch-statistic descriptors.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { PNG } from "pngjs";
import { DESCRIPTOR_DIM } from "./model.js";

export interface RgbImage {
  width: number;
  height: number;
  /** Row-major RGB triples in [0, 1]. */
  data: Float64Array;
}

export function loadImage(path: string): RgbImage {
  const raw = readFileSync(path);
  if (raw.length >= 2 && raw[0] === 0x50 && raw[1] === 0x36) {
    return parsePpm(raw);
  }
  const png = PNG.sync.read(raw);
  const data = new Float64Array(png.width * png.height * 3);
  for (let i = 0; i < png.width * png.height; i++) {
    data[3 * i] = png.data[4 * i] / 255;
    data[3 * i + 1] = png.data[4 * i + 1] / 255;
    data[3 * i + 2] = png.data[4 * i + 2] / 255;
  }
  return { width: png.width, height: png.height, data };
}

/** Binary PPM (P6), maxval 255: handy for dependency-free fixtures. */
function parsePpm(raw: Buffer): RgbImage {
  let offset = 0;
  const fields: string[] = [];
  while (fields.length < 4) {
    while (offset < raw.length && /\s/.test(String.fromCharCode(raw[offset]))) offset++;
    if (raw[offset] === 0x23) {
      while (offset < raw.length && raw[offset] !== 0x0a) offset++;
      continue;
    }
    let start = offset;
    while (offset < raw.length && !/\s/.test(String.fromCharCode(raw[offset]))) offset++;
    fields.push(raw.subarray(start, offset).toString("ascii"));
  }
  offset++; // single whitespace after maxval
  const [magic, w, h, maxval] = fields;
  if (magic !== "P6" || maxval !== "255") {
    throw new Error("only binary P6 PPM with maxval 255 is supported");
  }
  const width = parseInt(w, 10);
  const height = parseInt(h, 10);
  const expected = width * height * 3;
  if (raw.length - offset < expected) {
    throw new Error("PPM pixel payload is truncated");
  }
  const data = new Float64Array(expected);
  for (let i = 0; i < expected; i++) {
    data[i] = raw[offset + i] / 255;
  }
  return { width, height, data };
}

export function writePpm(path: string, img: RgbImage): void {
  const header = Buffer.from(`P6\n${img.width} ${img.height}\n255\n`, "ascii");
  const pixels = Buffer.alloc(img.width * img.height * 3);
  for (let i = 0; i < pixels.length; i++) {
    pixels[i] = Math.max(0, Math.min(255, Math.round(img.data[i] * 255)));
  }
  writeFileSync(path, Buffer.concat([header, pixels]));
}

/**
 * Per-patch descriptor: mean / std / min / max per channel plus mean
 * horizontal and vertical gradient magnitude per channel, and a constant
 * bias term. Deliberately position-free: identical patches yield identical
 * descriptors, so a uniform image produces a uniform response map.
 */
export function patchDescriptors(img: RgbImage, gridH: number, gridW: number): Float64Array[] {
  if (img.height % gridH !== 0 || img.width % gridW !== 0) {
    throw new Error(
      `image ${img.width}x${img.height} is not divisible by the ${gridW}x${gridH} patch grid`,
    );
  }
  const ph = img.height / gridH;
  const pw = img.width / gridW;
  const out: Float64Array[] = [];
  for (let gr = 0; gr < gridH; gr++) {
    for (let gc = 0; gc < gridW; gc++) {
      const desc = new Float64Array(DESCRIPTOR_DIM);
      for (let ch = 0; ch < 3; ch++) {
        let sum = 0;
        let sumSq = 0;
        let mn = Infinity;
        let mx = -Infinity;
        let gradX = 0;
        let gradY = 0;
        let gradXCount = 0;
        let gradYCount = 0;
        for (let r = gr * ph; r < (gr + 1) * ph; r++) {
          for (let c = gc * pw; c < (gc + 1) * pw; c++) {
            const v = img.data[3 * (r * img.width + c) + ch];
            sum += v;
            sumSq += v * v;
            if (v < mn) mn = v;
            if (v > mx) mx = v;
            if (c + 1 < (gc + 1) * pw) {
              gradX += Math.abs(img.data[3 * (r * img.width + c + 1) + ch] - v);
              gradXCount++;
            }
            if (r + 1 < (gr + 1) * ph) {
              gradY += Math.abs(img.data[3 * ((r + 1) * img.width + c) + ch] - v);
              gradYCount++;
            }
          }
        }
        const n = ph * pw;
        const mean = sum / n;
        desc[6 * ch] = mean;
        desc[6 * ch + 1] = Math.sqrt(Math.max(sumSq / n - mean * mean, 0));
        desc[6 * ch + 2] = mn;
        desc[6 * ch + 3] = mx;
        desc[6 * ch + 4] = gradXCount ? gradX / gradXCount : 0;
        desc[6 * ch + 5] = gradYCount ? gradY / gradYCount : 0;
      }
      desc[DESCRIPTOR_DIM - 1] = 1.0; // bias keeps flat patches encodable
      out.push(desc);
    }
  }
  return out;
}
