/**
 * Backend registry and checkpoint resolution.
 *
 * A checkpoint is either a builtin name ("builtin:pyrlk", "builtin:zero",
 * "builtin:vprior", "builtin:uniform") or the path of a JSON model card:
 *
 *   { "kind": "flow", "backend": "pyrlk", "windowRadius": 5, "levels": 3 }
 *
 * The card's "kind" must match the invoked subcommand. Neural estimators
 * plug in by registering another backend behind the same two interfaces;
 * nothing downstream of the adapter knows which backend produced a file.
 */

import * as fs from "node:fs";

import { verticalPriorDepth, uniformDepth, VerticalPriorOptions } from "./depth_prior.js";
import { AdapterError, FlowResult, GrayImage } from "./formats.js";
import { pyramidalLucasKanade, PyrLkOptions } from "./flow_pyrlk.js";

export interface FlowBackend {
  readonly name: string;
  estimate(img1: GrayImage, img2: GrayImage): FlowResult;
}

export interface DepthBackend {
  readonly name: string;
  /** Returns inverse depth (larger = closer), one value per pixel. */
  estimate(img: GrayImage): Float32Array;
}

interface ModelCard {
  kind: "flow" | "depth";
  backend: string;
  [param: string]: unknown;
}

function zeroFlowBackend(): FlowBackend {
  return {
    name: "zero",
    estimate: (img1) => ({
      width: img1.width,
      height: img1.height,
      u: new Float32Array(img1.width * img1.height),
      v: new Float32Array(img1.width * img1.height),
    }),
  };
}

function pyrlkBackend(params: PyrLkOptions = {}): FlowBackend {
  return {
    name: "pyrlk",
    estimate: (img1, img2) => pyramidalLucasKanade(img1, img2, params),
  };
}

function vpriorBackend(params: VerticalPriorOptions = {}): DepthBackend {
  return {
    name: "vprior",
    estimate: (img) => verticalPriorDepth(img, params),
  };
}

function uniformBackend(): DepthBackend {
  return { name: "uniform", estimate: uniformDepth };
}

function loadModelCard(checkpointPath: string, expectedKind: "flow" | "depth"): ModelCard {
  if (!fs.existsSync(checkpointPath)) {
    throw new AdapterError(`checkpoint not found: ${checkpointPath}`);
  }
  let card: ModelCard;
  try {
    card = JSON.parse(fs.readFileSync(checkpointPath, "utf-8"));
  } catch (err) {
    throw new AdapterError(
      `${checkpointPath}: not a readable model card (${(err as Error).message})`,
    );
  }
  if (card.kind !== expectedKind) {
    throw new AdapterError(
      `${checkpointPath}: model card kind ${JSON.stringify(card.kind)} `
      + `does not match the ${expectedKind} subcommand`,
    );
  }
  if (typeof card.backend !== "string") {
    throw new AdapterError(`${checkpointPath}: model card lacks a "backend" name`);
  }
  return card;
}

function cardParams(card: ModelCard): Record<string, unknown> {
  const { kind: _kind, backend: _backend, ...params } = card;
  return params;
}

export function resolveFlowBackend(checkpoint: string): FlowBackend {
  if (checkpoint === "builtin:pyrlk") return pyrlkBackend();
  if (checkpoint === "builtin:zero") return zeroFlowBackend();
  if (checkpoint.startsWith("builtin:")) {
    throw new AdapterError(
      `unknown builtin flow backend ${checkpoint}; expected builtin:pyrlk or builtin:zero`,
    );
  }
  const card = loadModelCard(checkpoint, "flow");
  switch (card.backend) {
    case "pyrlk":
      return pyrlkBackend(cardParams(card) as PyrLkOptions);
    case "zero":
      return zeroFlowBackend();
    default:
      throw new AdapterError(`no flow backend named ${JSON.stringify(card.backend)}`);
  }
}

export function resolveDepthBackend(checkpoint: string): DepthBackend {
  if (checkpoint === "builtin:vprior") return vpriorBackend();
  if (checkpoint === "builtin:uniform") return uniformBackend();
  if (checkpoint.startsWith("builtin:")) {
    throw new AdapterError(
      `unknown builtin depth backend ${checkpoint}; expected builtin:vprior or builtin:uniform`,
    );
  }
  const card = loadModelCard(checkpoint, "depth");
  switch (card.backend) {
    case "vprior":
      return vpriorBackend(cardParams(card) as VerticalPriorOptions);
    case "uniform":
      return uniformBackend();
    default:
      throw new AdapterError(`no depth backend named ${JSON.stringify(card.backend)}`);
  }
}
