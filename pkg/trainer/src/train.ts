import * as tf from "@tensorflow/tfjs";

import { Dataset } from "./idx";
import { marginLoss } from "./loss";
import { ModelConfig, ShallowCaps, predictions } from "./model";
import { mulberry32, shuffledIndices } from "./prng";

export interface TrainSpec {
  epochs: number;
  batchSize: number;
  initialLearningRate: number;
  decaySteps: number;
  decayRate: number;
  seed: number;
  logEvery?: number;
}

export const DEFAULT_TRAIN_SPEC: TrainSpec = {
  epochs: 3,
  batchSize: 50,
  initialLearningRate: 0.001,
  decaySteps: 2000,
  decayRate: 0.96,
  seed: 0,
};

function batchTensor(ds: Dataset, idx: Int32Array | number[],
                     from: number, to: number): { x: tf.Tensor4D; y: Int32Array } {
  const size = ds.h * ds.w;
  const count = to - from;
  const pixels = new Float32Array(count * size);
  const labels = new Int32Array(count);
  for (let i = 0; i < count; i++) {
    const src = idx[from + i];
    pixels.set(ds.images.subarray(src * size, (src + 1) * size), i * size);
    labels[i] = ds.labels[src];
  }
  return { x: tf.tensor4d(pixels, [count, ds.h, ds.w, 1]), y: labels };
}

export function accuracy(model: ShallowCaps, ds: Dataset,
                         batchSize = 100): number {
  const all = new Int32Array(ds.n);
  for (let i = 0; i < ds.n; i++) all[i] = i;
  let correct = 0;
  for (let from = 0; from < ds.n; from += batchSize) {
    const to = Math.min(from + batchSize, ds.n);
    tf.tidy(() => {
      const { x, y } = batchTensor(ds, all, from, to);
      const preds = predictions(model.lengths(x));
      for (let i = 0; i < y.length; i++) {
        if (preds[i] === y[i]) correct++;
      }
    });
  }
  return correct / ds.n;
}

export interface TrainResult {
  model: ShallowCaps;
  finalLoss: number;
  steps: number;
  lossHistory: number[];
}

/** Full-precision training with margin loss, Adam, and a continuous
 * exponential learning-rate decay. Throws if the loss goes non-finite. */
export function train(config: ModelConfig, spec: TrainSpec, data: Dataset,
                      log: (msg: string) => void = () => {}): TrainResult {
  const model = new ShallowCaps(config);
  const optimizer = tf.train.adam(spec.initialLearningRate);
  const rand = mulberry32(spec.seed + 0x9e3779b9);
  const numClasses = config.numClasses;
  const lossHistory: number[] = [];
  let step = 0;
  let lastLoss = NaN;

  for (let epoch = 0; epoch < spec.epochs; epoch++) {
    const order = shuffledIndices(data.n, rand);
    for (let from = 0; from < data.n; from += spec.batchSize) {
      const to = Math.min(from + spec.batchSize, data.n);
      const lr = spec.initialLearningRate
        * Math.pow(spec.decayRate, step / spec.decaySteps);
      (optimizer as unknown as { learningRate: number }).learningRate = lr;
      const lossValue = tf.tidy(() => {
        const { x, y } = batchTensor(data, order, from, to);
        const oneHot = tf.oneHot(tf.tensor1d(y, "int32"), numClasses);
        const loss = optimizer.minimize(
          () => marginLoss(model.lengths(x), oneHot), true,
          model.variables()) as tf.Scalar;
        return loss.dataSync()[0];
      });
      lastLoss = lossValue;
      lossHistory.push(lossValue);
      if (!Number.isFinite(lossValue)) {
        throw new Error(`training diverged: loss ${lossValue} at step ${step}`);
      }
      if (spec.logEvery && step % spec.logEvery === 0) {
        log(`epoch ${epoch} step ${step} loss ${lossValue.toFixed(4)} lr ${lr.toExponential(2)}`);
      }
      step++;
    }
  }
  return { model, finalLoss: lastLoss, steps: step, lossHistory };
}
