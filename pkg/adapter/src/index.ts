export { resolveDepthBackend, resolveFlowBackend } from "./backends.js";
export type { DepthBackend, FlowBackend } from "./backends.js";
export { uniformDepth, verticalPriorDepth } from "./depth_prior.js";
export { pyramidalLucasKanade } from "./flow_pyrlk.js";
export type { PyrLkOptions } from "./flow_pyrlk.js";
export {
  AdapterError,
  decodeFlo,
  encodeFlo,
  encodePfm,
  readPngGray,
  writeFlo,
  writePfm,
} from "./formats.js";
export type { FlowResult, GrayImage } from "./formats.js";
export { main } from "./cli.js";
