export {
  Dtype,
  Tensor,
  TensorFormatError,
  decodeTensor,
  encodeTensor,
  f32Tensor,
  readTensor,
  u32Tensor,
  writeTensor,
} from "./mtns.js";
export {
  ImageDecodeError,
  RasterImage,
  decodeImage,
  decodePnm,
  loadImage,
  resizeBilinear,
  toGray,
} from "./image.js";
export {
  HashingTextEmbedder,
  ModelError,
  ModelOptions,
  PatchEmbedder,
  ProjectionPatchEmbedder,
  TextEmbedder,
  resolveTextModel,
  resolveVisionModel,
} from "./embed.js";
export { encodeBinaryMask, encodeRegionMask, uniformRegionMask } from "./mask.js";
export {
  IMAGE_EXTENSIONS,
  LayoutError,
  SourceImage,
  SourceTask,
  SourceTestImage,
  discoverTasks,
} from "./dataset.js";
export {
  ExportConfig,
  ExportError,
  ExportSummary,
  defaultConfig,
  runExport,
} from "./export.js";
export { dispatch } from "./cli.js";
