#!/usr/bin/env node
/**
 * adapter flow  --img1 A.png --img2 B.png --checkpoint CKPT --out out.flo
 * adapter depth --img A.png --checkpoint CKPT --out out.pfm
 *
 * Runs the selected estimator backend over PNG frames and writes the
 * prediction in the pipeline's interchange format. Exit 0 on success,
 * exit 1 with a one-line diagnostic otherwise; output files appear
 * atomically or not at all.
 */

import { realpathSync } from "node:fs";
import * as process from "node:process";
import { fileURLToPath } from "node:url";

import { resolveDepthBackend, resolveFlowBackend } from "./backends.js";
import { AdapterError, readPngGray, writeFlo, writePfm } from "./formats.js";

const USAGE = `usage:
  adapter flow  --img1 <png> --img2 <png> --checkpoint <ckpt> --out <flo> [--device <hint>]
  adapter depth --img <png> --checkpoint <ckpt> --out <pfm> [--device <hint>]

A checkpoint is builtin:<name> (flow: pyrlk, zero; depth: vprior, uniform)
or the path of a JSON model card naming a backend and its parameters.`;

function parseFlags(argv: string[], allowed: Set<string>): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || !allowed.has(key)) {
      throw new AdapterError(`unknown argument ${key}\n${USAGE}`);
    }
    const value = argv[i + 1];
    if (value === undefined) {
      throw new AdapterError(`missing value for ${key}`);
    }
    flags.set(key.slice(2), value);
  }
  return flags;
}

function required(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (value === undefined) {
    throw new AdapterError(`missing required flag --${name}\n${USAGE}`);
  }
  return value;
}

function checkDevice(flags: Map<string, string>): void {
  const device = flags.get("device");
  if (device && device !== "cpu") {
    process.stderr.write(`note: device hint ${device} ignored, running on cpu\n`);
  }
}

function runFlow(argv: string[]): void {
  const flags = parseFlags(argv, new Set(["--img1", "--img2", "--checkpoint", "--out", "--device"]));
  const img1Path = required(flags, "img1");
  const img2Path = required(flags, "img2");
  const checkpoint = required(flags, "checkpoint");
  const outPath = required(flags, "out");
  checkDevice(flags);

  const backend = resolveFlowBackend(checkpoint);
  const img1 = readPngGray(img1Path);
  const img2 = readPngGray(img2Path);
  if (img1.width !== img2.width || img1.height !== img2.height) {
    throw new AdapterError(
      `input sizes differ: ${img1.width}x${img1.height} vs ${img2.width}x${img2.height}`,
    );
  }
  const flow = backend.estimate(img1, img2);
  writeFlo(outPath, flow);
}

function runDepth(argv: string[]): void {
  const flags = parseFlags(argv, new Set(["--img", "--checkpoint", "--out", "--device"]));
  const imgPath = required(flags, "img");
  const checkpoint = required(flags, "checkpoint");
  const outPath = required(flags, "out");
  checkDevice(flags);

  const backend = resolveDepthBackend(checkpoint);
  const img = readPngGray(imgPath);
  const depth = backend.estimate(img);
  for (let i = 0; i < depth.length; i++) {
    if (!Number.isFinite(depth[i])) {
      throw new AdapterError("depth backend produced a non-finite value");
    }
  }
  writePfm(outPath, img.width, img.height, depth);
}

export function main(argv: string[] = process.argv.slice(2)): number {
  const [command, ...rest] = argv;
  try {
    switch (command) {
      case "flow":
        runFlow(rest);
        return 0;
      case "depth":
        runDepth(rest);
        return 0;
      case undefined:
      case "--help":
      case "-h":
        process.stdout.write(USAGE + "\n");
        return command === undefined ? 1 : 0;
      default:
        throw new AdapterError(`unknown subcommand ${command}\n${USAGE}`);
    }
  } catch (err) {
    if (err instanceof AdapterError) {
      process.stderr.write(`error: ${err.message}\n`);
      return 1;
    }
    process.stderr.write(`error: ${(err as Error).stack ?? err}\n`);
    return 1;
  }
}

function invokedDirectly(): boolean {
  if (!process.argv[1]) return false;
  try {
    return fileURLToPath(import.meta.url) === realpathSync(process.argv[1]);
  } catch {
    return false;
  }
}

if (invokedDirectly()) {
  process.exit(main());
}
