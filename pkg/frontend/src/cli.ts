#!/usr/bin/env node
/**
 * ccemb-export --input texts.txt --encoder reference-768 --out embeddings.ccemb
 *              [--manifest manifest.json]
 *
 * Reads one text per line, encodes each, pools the last four layers, and
 * writes a CCEMB1 binary plus a JSON manifest.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { loadEncoder } from "./encoder.js";
import { exportEmbeddings } from "./export.js";

function parseArgs(argv: string[]): Map<string, string> {
  const args = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (!flag.startsWith("--") || value === undefined) {
      throw new Error(`bad arguments near ${JSON.stringify(flag)}`);
    }
    args.set(flag.slice(2), value);
  }
  return args;
}

function main(argv: string[]): number {
  let args: Map<string, string>;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(String(err));
    return 2;
  }
  const input = args.get("input");
  const out = args.get("out");
  const encoderName = args.get("encoder") ?? "reference-768";
  if (!input || !out) {
    console.error(
      "usage: ccemb-export --input <texts.txt> --out <file.ccemb> " +
        "[--encoder reference-768] [--manifest <manifest.json>]",
    );
    return 2;
  }
  const manifestPath = args.get("manifest") ?? `${out}.manifest.json`;

  const texts = readFileSync(input, "utf-8")
    .split("\n")
    .filter((line) => line.length > 0);
  if (texts.length === 0) {
    console.error(`no texts in ${input}`);
    return 1;
  }
  try {
    const encoder = loadEncoder(encoderName);
    const result = exportEmbeddings(texts, encoder);
    writeFileSync(out, result.bytes);
    writeFileSync(manifestPath, JSON.stringify(result.manifest, null, 2) + "\n");
    console.log(
      `wrote ${result.manifest.text_count} records (dim ${result.manifest.dim}) ` +
        `to ${out}, sha256 ${result.manifest.sha256.slice(0, 12)}`,
    );
    return 0;
  } catch (err) {
    console.error(String(err));
    return 1;
  }
}

process.exit(main(process.argv.slice(2)));
