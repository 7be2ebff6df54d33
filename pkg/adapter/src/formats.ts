/**
 * Raster I/O for the pipeline's interchange formats.
 *
 * Flow predictions go out as binary ".flo" (little-endian: float magic
 * 202021.25, int32 width/height, row-major interleaved float32 (u, v)).
 * Depth predictions go out as grayscale portable float maps ("Pf" header,
 * dimensions line, scale line whose sign encodes endianness, rows stored
 * bottom-to-top). Inputs are 8/16-bit PNG frames decoded to [0, 1] floats.
 *
 * Output files are written temp-then-rename so a crashed run never leaves
 * a partial prediction behind.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import * as process from "node:process";
import { PNG } from "pngjs";

export const FLO_MAGIC = 202021.25;

export interface GrayImage {
  width: number;
  height: number;
  /** Row-major luminance in [0, 1]. */
  data: Float32Array;
}

export interface FlowResult {
  width: number;
  height: number;
  /** Horizontal displacement per pixel, positive rightward. */
  u: Float32Array;
  /** Vertical displacement per pixel, positive downward. */
  v: Float32Array;
}

export class AdapterError extends Error {}

export function readPngGray(filePath: string): GrayImage {
  let png: PNG;
  try {
    png = PNG.sync.read(fs.readFileSync(filePath));
  } catch (err) {
    throw new AdapterError(`${filePath}: ${(err as Error).message}`);
  }
  const { width, height, data } = png;
  const out = new Float32Array(width * height);
  for (let i = 0; i < width * height; i++) {
    const r = data[i * 4];
    const g = data[i * 4 + 1];
    const b = data[i * 4 + 2];
    out[i] = (0.299 * r + 0.587 * g + 0.114 * b) / 255;
  }
  return { width, height, data: out };
}

/**
 * Test seam: when ADAPTER_TEST_CRASH=before-rename the process dies after
 * the temp file is on disk, which is how the no-partial-output contract is
 * exercised end to end.
 */
export function atomicWrite(filePath: string, payload: Buffer): void {
  const tmp = path.join(
    path.dirname(filePath),
    `.${path.basename(filePath)}.tmp-${process.pid}`,
  );
  fs.writeFileSync(tmp, payload);
  if (process.env.ADAPTER_TEST_CRASH === "before-rename") {
    process.stderr.write("simulated crash before rename\n");
    process.exit(1);
  }
  fs.renameSync(tmp, filePath);
}

function floatsToLEBuffer(values: Float32Array): Buffer {
  const buf = Buffer.allocUnsafe(values.length * 4);
  for (let i = 0; i < values.length; i++) {
    buf.writeFloatLE(values[i], i * 4);
  }
  return buf;
}

export function encodeFlo(flow: FlowResult): Buffer {
  const { width, height, u, v } = flow;
  if (u.length !== width * height || v.length !== width * height) {
    throw new AdapterError("flow component length does not match dimensions");
  }
  const header = Buffer.allocUnsafe(12);
  header.writeFloatLE(FLO_MAGIC, 0);
  header.writeInt32LE(width, 4);
  header.writeInt32LE(height, 8);
  const interleaved = new Float32Array(width * height * 2);
  for (let i = 0; i < width * height; i++) {
    interleaved[i * 2] = u[i];
    interleaved[i * 2 + 1] = v[i];
  }
  return Buffer.concat([header, floatsToLEBuffer(interleaved)]);
}

export function writeFlo(filePath: string, flow: FlowResult): void {
  atomicWrite(filePath, encodeFlo(flow));
}

export function encodePfm(width: number, height: number, data: Float32Array): Buffer {
  if (data.length !== width * height) {
    throw new AdapterError("depth length does not match dimensions");
  }
  const header = Buffer.from(`Pf\n${width} ${height}\n-1.0\n`, "ascii");
  // PFM stores rows bottom-to-top
  const flipped = new Float32Array(width * height);
  for (let y = 0; y < height; y++) {
    flipped.set(data.subarray((height - 1 - y) * width, (height - y) * width), y * width);
  }
  return Buffer.concat([header, floatsToLEBuffer(flipped)]);
}

export function writePfm(filePath: string, width: number, height: number,
                         data: Float32Array): void {
  atomicWrite(filePath, encodePfm(width, height, data));
}

/** Round-trip helper used by the self-checks: parse a .flo buffer. */
export function decodeFlo(buf: Buffer): FlowResult {
  if (buf.length < 12) {
    throw new AdapterError("flow file shorter than its header");
  }
  const magic = buf.readFloatLE(0);
  if (magic !== FLO_MAGIC) {
    throw new AdapterError(`bad flow magic ${magic}`);
  }
  const width = buf.readInt32LE(4);
  const height = buf.readInt32LE(8);
  if (buf.length !== 12 + width * height * 8) {
    throw new AdapterError("flow payload length mismatch");
  }
  const u = new Float32Array(width * height);
  const v = new Float32Array(width * height);
  for (let i = 0; i < width * height; i++) {
    u[i] = buf.readFloatLE(12 + i * 8);
    v[i] = buf.readFloatLE(16 + i * 8);
  }
  return { width, height, u, v };
}
