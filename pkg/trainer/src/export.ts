import * as fs from "fs";
import * as path from "path";
import * as tf from "@tensorflow/tfjs";

import { ShallowCaps } from "./model";

const MANIFEST_MAGIC = "QCAPS-MANIFEST";
const MANIFEST_VERSION = 1;

interface TensorRecord {
  name: string;
  role: "weight" | "bias";
  layer: number;
  shape: number[];
  offset: number;
  length: number;
}

function toBuffer(t: tf.Tensor): Buffer {
  const data = t.dataSync() as Float32Array;
  // Float32Array is little-endian on every platform node runs on
  return Buffer.from(data.buffer.slice(data.byteOffset,
    data.byteOffset + data.byteLength));
}

/** Tensors in the inference engine's layout, in blob order. */
function exportTensors(model: ShallowCaps): Array<{ name: string; role: "weight" | "bias"; layer: number; tensor: tf.Tensor }> {
  return [
    // conv kernels go from HWIO to OIHW
    { name: "layer0.weight", role: "weight", layer: 0,
      tensor: tf.transpose(model.convKernel, [3, 2, 0, 1]) },
    { name: "layer0.bias", role: "bias", layer: 0, tensor: model.convBias },
    { name: "layer1.weight", role: "weight", layer: 1,
      tensor: tf.transpose(model.primaryKernel, [3, 2, 0, 1]) },
    { name: "layer1.bias", role: "bias", layer: 1, tensor: model.primaryBias },
    { name: "layer2.weight", role: "weight", layer: 2,
      tensor: model.classWeights },
  ];
}

export interface ExportPaths {
  manifest: string;
  blob: string;
  arch: string;
}

export function exportModel(model: ShallowCaps, paths: ExportPaths): void {
  const records: TensorRecord[] = [];
  const chunks: Buffer[] = [];
  let offset = 0;
  for (const item of exportTensors(model)) {
    const buf = toBuffer(item.tensor);
    records.push({
      name: item.name,
      role: item.role,
      layer: item.layer,
      shape: item.tensor.shape.slice(),
      offset,
      length: buf.length,
    });
    chunks.push(buf);
    offset += buf.length;
  }
  const manifest = {
    magic: MANIFEST_MAGIC,
    version: MANIFEST_VERSION,
    architecture: "shallowcaps",
    tensors: records,
  };
  for (const p of [paths.manifest, paths.blob, paths.arch]) {
    fs.mkdirSync(path.dirname(path.resolve(p)), { recursive: true });
  }
  fs.writeFileSync(paths.manifest, JSON.stringify(manifest, null, 2) + "\n");
  fs.writeFileSync(paths.blob, Buffer.concat(chunks));
  const arch = {
    preset: "shallowcaps",
    num_classes: model.config.numClasses,
    input_shape: [1, model.config.inputSize, model.config.inputSize],
    width_factor: model.config.widthFactor,
    routing_iterations: model.config.routingIterations,
  };
  fs.writeFileSync(paths.arch, JSON.stringify(arch, null, 2) + "\n");
}
