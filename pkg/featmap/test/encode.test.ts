import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { encode, serialize } from "../src/encode.js";
import { loadImage, patchDescriptors, writePpm } from "../src/image.js";
import { encodeText, fnv1a, mulberry32 } from "../src/model.js";
import { responseMapSchema } from "../src/schema.js";

const FIXTURES = join(__dirname, "fixtures");

function tmp(): string {
  return mkdtempSync(join(tmpdir(), "featmap-"));
}

describe("model determinism", () => {
  it("prng and hash are stable", () => {
    const rand = mulberry32(42);
    const seq = [rand(), rand(), rand()];
    const rand2 = mulberry32(42);
    expect([rand2(), rand2(), rand2()]).toEqual(seq);
    expect(fnv1a("ring")).toBe(fnv1a("ring"));
    expect(fnv1a("ring")).not.toBe(fnv1a("peg"));
  });

  it("text embeddings are unit-norm and token-order invariant", () => {
    const a = encodeText("pick the ring");
    const b = encodeText("ring the pick");
    let norm = 0;
    for (const x of a) norm += x * x;
    expect(norm).toBeCloseTo(1.0, 12);
    expect(Array.from(a)).toEqual(Array.from(b));
    expect(() => encodeText("  !! ")).toThrow();
  });
});

describe("image handling", () => {
  it("round-trips PPM pixels", () => {
    const dir = tmp();
    const img = {
      width: 8,
      height: 4,
      data: new Float64Array(8 * 4 * 3).map((_, i) => (i % 17) / 16),
    };
    const path = join(dir, "img.ppm");
    writePpm(path, img);
    const back = loadImage(path);
    expect(back.width).toBe(8);
    expect(back.height).toBe(4);
    for (let i = 0; i < img.data.length; i++) {
      expect(Math.abs(back.data[i] - img.data[i])).toBeLessThan(1 / 255);
    }
  });

  it("rejects a grid that does not divide the image", () => {
    const img = loadImage(join(FIXTURES, "uniform.ppm"));
    expect(() => patchDescriptors(img, 13, 13)).toThrow(/not divisible/);
  });
});

describe("encode", () => {
  it("uniform image yields a degenerate raw spread and midpoint values", () => {
    const map = encode({
      imagePath: join(FIXTURES, "uniform.ppm"),
      text: "pick the ring and place it onto the peg",
      grid: 16,
    });
    const spread = map.meta.raw_max - map.meta.raw_min;
    expect(spread).toBeLessThan(1e-9);
    expect(map.values.every((v) => v === 0.5)).toBe(true);
  });

  it("values always lie in [0, 1] and the schema validates", () => {
    const map = encode({
      imagePath: join(FIXTURES, "scene.ppm"),
      text: "pick the ring and place it onto the peg",
      grid: 16,
    });
    expect(map.values.every((v) => v >= 0 && v <= 1)).toBe(true);
    expect(Math.min(...map.values)).toBe(0);
    expect(Math.max(...map.values)).toBe(1);
    expect(() => responseMapSchema.parse(map)).not.toThrow();
  });

  it("matches the committed regression fixture byte for byte", () => {
    const map = encode({
      imagePath: join(FIXTURES, "scene.ppm"),
      text: "pick the ring and place it onto the peg",
      pointsPath: join(FIXTURES, "scene_points.json"),
      grid: 16,
      imageId: "scene-fixture",
    });
    const committed = readFileSync(join(FIXTURES, "scene_map.json"), "utf-8");
    expect(serialize(map)).toBe(committed);
  });

  it("propagates 3D points and rejects grid mismatches", () => {
    const dir = tmp();
    const good = {
      h: 16,
      w: 16,
      points: Array.from({ length: 256 }, (_, i) => (i === 0 ? null : [0.1, 0.2, 0.3])),
    };
    const goodPath = join(dir, "pts.json");
    writeFileSync(goodPath, JSON.stringify(good));
    const map = encode({
      imagePath: join(FIXTURES, "scene.ppm"),
      text: "ring",
      pointsPath: goodPath,
      grid: 16,
    });
    expect(map.points[0]).toBeNull();
    expect(map.points[1]).toEqual([0.1, 0.2, 0.3]);

    const badPath = join(dir, "bad.json");
    writeFileSync(badPath, JSON.stringify({ h: 8, w: 8, points: new Array(64).fill(null) }));
    expect(() =>
      encode({ imagePath: join(FIXTURES, "scene.ppm"), text: "ring", pointsPath: badPath, grid: 16 }),
    ).toThrow(/does not match/);
  });
});

describe("command line", () => {
  it("encodes end to end and exits 0", () => {
    const dir = tmp();
    const out = join(dir, "map.json");
    execFileSync("node", [
      join(__dirname, "..", "dist", "cli.js"),
      "encode",
      "--image",
      join(FIXTURES, "scene.ppm"),
      "--text",
      "pick the ring",
      "--out",
      out,
    ]);
    const doc = responseMapSchema.parse(JSON.parse(readFileSync(out, "utf-8")));
    expect(doc.h).toBe(16);
  });

  it("fails with exit 1 on an unreadable image", () => {
    expect(() =>
      execFileSync(
        "node",
        [
          join(__dirname, "..", "dist", "cli.js"),
          "encode",
          "--image",
          "/nonexistent.png",
          "--text",
          "x",
          "--out",
          "/tmp/never.json",
        ],
        { stdio: "pipe" },
      ),
    ).toThrow();
  });
});

describe("core-package interoperability", () => {
  it("the keypoint extractor accepts featmap output", () => {
    const dir = tmp();
    const out = join(dir, "map.json");
    const map = encode({
      imagePath: join(FIXTURES, "scene.ppm"),
      text: "pick the ring and place it onto the peg",
      pointsPath: join(FIXTURES, "scene_points.json"),
      grid: 16,
      imageId: "scene-fixture",
    });
    writeFileSync(out, serialize(map));
    const stdout = execFileSync(
      "python3",
      ["-m", "hybridgen.cli", "keypoints", "--map", out, "--clusters", "3", "--top-fraction", "0.15"],
      { cwd: join(__dirname, "..", ".."), encoding: "utf-8" },
    );
    const points = JSON.parse(stdout);
    expect(points.length).toBeGreaterThanOrEqual(1);
  });
});
