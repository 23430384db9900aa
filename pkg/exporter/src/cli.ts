#!/usr/bin/env node
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { runExport } from "./export.js";
import { runVerify } from "./verify.js";

yargs(hideBin(process.argv))
  .scriptName("cactiscan-export")
  .command(
    "export",
    "write a model-format v1 file from a checkpoint",
    (y) =>
      y
        .option("manifest", { type: "string", demandOption: true, describe: "export manifest JSON" })
        .option("out", { type: "string", demandOption: true, describe: "output model file" }),
    (argv) => {
      const result = runExport(argv.manifest, argv.out);
      for (const t of result.tensors) {
        console.log(`${t.sha256}  ${t.name} [${t.shape.join("x")}]`);
      }
      console.log(`wrote ${result.bytes} bytes -> ${result.outPath}`);
    },
  )
  .command(
    "verify",
    "compare a model file against its source checkpoint",
    (y) =>
      y
        .option("model", { type: "string", demandOption: true })
        .option("manifest", { type: "string", demandOption: true }),
    (argv) => {
      const report = runVerify(argv.model, argv.manifest);
      if (report.pass) {
        console.log(`PASS: ${report.checked} tensors bitwise-identical`);
      } else {
        console.error(`FAIL: ${report.mismatches.length} problems`);
        for (const m of report.mismatches) {
          console.error(`  ${m}`);
        }
        process.exitCode = 1;
      }
    },
  )
  .demandCommand(1)
  .strict()
  .fail((msg, err) => {
    console.error(`error: ${msg ?? err?.message}`);
    process.exit(1);
  })
  .parse();
