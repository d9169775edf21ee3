#!/usr/bin/env node
/**
 * featmap encode --image scene.png --text "..." [--points pts.json]
 *                [--grid 16] [--image-id id] --out map.json
 */

import { writeFileSync } from "node:fs";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { encode, serialize } from "./encode.js";

async function main(): Promise<void> {
  await yargs(hideBin(process.argv))
    .command(
      "encode",
      "compute a patch-level image-text response map",
      (cmd) =>
        cmd
          .option("image", { type: "string", demandOption: true, describe: "PNG or P6 PPM file" })
          .option("text", { type: "string", demandOption: true, describe: "task description prompt" })
          .option("points", { type: "string", describe: "per-cell 3D points JSON" })
          .option("grid", { type: "number", default: 16, describe: "patch grid size" })
          .option("image-id", { type: "string", describe: "identifier stored in meta.image" })
          .option("out", { type: "string", demandOption: true }),
      (argv) => {
        const map = encode({
          imagePath: argv.image,
          text: argv.text,
          pointsPath: argv.points,
          grid: argv.grid,
          imageId: argv["image-id"],
        });
        writeFileSync(argv.out, serialize(map));
        const spread = map.meta.raw_max - map.meta.raw_min;
        console.log(
          `wrote ${argv.out} (${map.h}x${map.w}, raw similarity spread ${spread.toExponential(2)})`,
        );
      },
    )
    .demandCommand(1)
    .strict()
    .fail((msg, err) => {
      console.error(`error: ${err?.message ?? msg}`);
      process.exit(1);
    })
    .parseAsync();
}

main().catch((err) => {
  console.error(`error: ${err.message}`);
  process.exit(1);
});
