/**
 * Regenerates the committed fixtures:
 *   test/fixtures/uniform.ppm           flat gray image
 *   test/fixtures/scene.ppm             synthetic tabletop with bright blobs
 *   test/fixtures/scene_points.json     patch-grid 3D points on a table plane
 *   test/fixtures/scene_map.json        regression output for scene.ppm
 *   ../tests/fixtures/featmap_16x16.json  map consumed by the core package
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { encode, serialize } from "./encode.js";
import { writePpm, type RgbImage } from "./image.js";

const HERE = dirname(fileURLToPath(import.meta.url));
const FIXTURES = join(HERE, "..", "test", "fixtures");
const CORE_FIXTURES = join(HERE, "..", "..", "tests", "fixtures");

const PROMPT = "pick the ring and place it onto the peg";

function uniformImage(size: number, value: number): RgbImage {
  const data = new Float64Array(size * size * 3).fill(value);
  return { width: size, height: size, data };
}

function sceneImage(size: number): RgbImage {
  const data = new Float64Array(size * size * 3);
  // Wooden-table backdrop with a subtle vertical shade.
  for (let r = 0; r < size; r++) {
    for (let c = 0; c < size; c++) {
      const i = 3 * (r * size + c);
      const shade = 0.25 + 0.1 * (r / size);
      data[i] = shade + 0.05;
      data[i + 1] = shade;
      data[i + 2] = shade - 0.05;
    }
  }
  const blobs: Array<[number, number, number, [number, number, number]]> = [
    [0.25, 0.3, 9, [0.9, 0.2, 0.15]], // ring
    [0.7, 0.72, 7, [0.2, 0.8, 0.3]], // peg top
    [0.75, 0.25, 6, [0.9, 0.85, 0.2]], // marker
  ];
  for (const [fr, fc, radius, color] of blobs) {
    const cr = fr * size;
    const cc = fc * size;
    for (let r = 0; r < size; r++) {
      for (let c = 0; c < size; c++) {
        const d2 = (r - cr) ** 2 + (c - cc) ** 2;
        const w = Math.exp(-d2 / (2 * radius * radius));
        if (w < 1e-3) continue;
        const i = 3 * (r * size + c);
        for (let ch = 0; ch < 3; ch++) {
          data[i + ch] = Math.min(1, data[i + ch] * (1 - w) + color[ch] * w);
        }
      }
    }
  }
  return { width: size, height: size, data };
}

function tablePlanePoints(grid: number) {
  const points: Array<[number, number, number] | null> = [];
  for (let r = 0; r < grid; r++) {
    for (let c = 0; c < grid; c++) {
      const x = -0.3 + (0.6 * c) / (grid - 1);
      const y = -0.3 + (0.6 * r) / (grid - 1);
      points.push([x, y, 0.02]);
    }
  }
  return { h: grid, w: grid, points };
}

function main(): void {
  mkdirSync(FIXTURES, { recursive: true });

  writePpm(join(FIXTURES, "uniform.ppm"), uniformImage(128, 0.5));
  writePpm(join(FIXTURES, "scene.ppm"), sceneImage(128));
  writeFileSync(
    join(FIXTURES, "scene_points.json"),
    JSON.stringify(tablePlanePoints(16)) + "\n",
  );

  const map = encode({
    imagePath: join(FIXTURES, "scene.ppm"),
    text: PROMPT,
    pointsPath: join(FIXTURES, "scene_points.json"),
    grid: 16,
    imageId: "scene-fixture",
  });
  writeFileSync(join(FIXTURES, "scene_map.json"), serialize(map));
  writeFileSync(join(CORE_FIXTURES, "featmap_16x16.json"), serialize(map));
  console.log("fixtures written");
}

main();
