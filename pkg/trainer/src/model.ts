import * as tf from "@tensorflow/tfjs";

export interface ModelConfig {
  widthFactor: number;
  numClasses: number;
  inputSize: number;
  routingIterations: number;
  seed: number;
}

export const DEFAULT_CONFIG: ModelConfig = {
  widthFactor: 1 / 8,
  numClasses: 10,
  inputSize: 28,
  routingIterations: 3,
  seed: 0,
};

/** Capsule nonlinearity along the last axis: s * |s| / (1 + |s|^2).
 * The tiny epsilon keeps the gradient finite at the origin. */
export function squash(s: tf.Tensor, eps = 1e-8): tf.Tensor {
  const norm2 = tf.sum(tf.square(s), -1, true);
  const norm = tf.sqrt(tf.add(norm2, eps));
  return tf.mul(s, tf.div(norm, tf.add(norm2, 1)));
}

/** Row-major patch indices for a valid convolution, used to express
 * conv2d as gather + matMul. The pure-JS backend's conv2d gradient
 * kernels are over an order of magnitude slower than matMul, which
 * makes native tf.conv2d unusable for training here. */
export function patchIndices(h: number, w: number, k: number,
                             stride: number): tf.Tensor1D {
  const ho = Math.floor((h - k) / stride) + 1;
  const wo = Math.floor((w - k) / stride) + 1;
  const idx = new Int32Array(ho * wo * k * k);
  let p = 0;
  for (let y = 0; y < ho; y++) {
    for (let x = 0; x < wo; x++) {
      for (let i = 0; i < k; i++) {
        for (let j = 0; j < k; j++) {
          idx[p++] = (y * stride + i) * w + (x * stride + j);
        }
      }
    }
  }
  return tf.tensor1d(idx, "int32");
}

/** Valid cross-correlation via im2col: x [B,H,W,C], kernel [k,k,C,O]. */
export function conv2dViaMatMul(x: tf.Tensor4D, kernel: tf.Tensor4D,
                                stride: number,
                                indices: tf.Tensor1D): tf.Tensor4D {
  const [b, h, w, c] = x.shape;
  const [k, , , o] = kernel.shape;
  const ho = Math.floor((h - k) / stride) + 1;
  const wo = Math.floor((w - k) / stride) + 1;
  const flat = tf.reshape(x, [b, h * w, c]);
  const patches = tf.gather(flat, indices, 1); // [B, ho*wo*k*k, C]
  const mat = tf.reshape(patches, [b * ho * wo, k * k * c]);
  const kmat = tf.reshape(kernel, [k * k * c, o]);
  return tf.reshape(tf.matMul(mat, kmat), [b, ho, wo, o]) as tf.Tensor4D;
}

/** Routing by agreement over votes [B, nIn, nOut, d] -> [B, nOut, d].
 * Coefficients are softmax-normalized over the output-capsule axis.
 * Contractions go through batched matMul; the obvious broadcast
 * multiply+sum spelling is an order of magnitude slower on the pure-JS
 * backend (and einsum has no gradient there). */
export function dynamicRouting(votes: tf.Tensor4D, iterations: number): tf.Tensor {
  const [b, nIn, nOut, d] = votes.shape;
  const votesT = tf.transpose(votes, [0, 2, 1, 3]); // [B, nOut, nIn, d]
  let logits: tf.Tensor = tf.zeros([b, nIn, nOut]);
  let out: tf.Tensor = tf.zeros([b, nOut, d]);
  for (let it = 0; it < iterations; it++) {
    const coup = tf.softmax(logits, 2); // [B, nIn, nOut]
    const coupT = tf.expandDims(tf.transpose(coup, [0, 2, 1]), 2); // [B, nOut, 1, nIn]
    const s = tf.reshape(tf.matMul(coupT, votesT), [b, nOut, d]);
    out = squash(s);
    const agree = tf.matMul(votesT, tf.reshape(out, [b, nOut, d, 1]));
    logits = tf.add(logits, tf.transpose(tf.reshape(agree, [b, nOut, nIn]),
      [0, 2, 1]));
  }
  return out;
}

/** The three-layer capsule reference network, width-scalable. Layouts
 * mirror the inference engine: primary-capsule channels fold as
 * c = type*8 + dim, capsules flatten in (type, row, col) order. */
export class ShallowCaps {
  readonly config: ModelConfig;
  readonly convChannels: number;
  readonly capsTypes: number;
  readonly primaryDim = 8;
  readonly classDim = 16;
  readonly convOut: number;
  readonly primaryOut: number;
  readonly numPrimary: number;

  convKernel: tf.Variable;   // [9, 9, 1, convChannels]
  convBias: tf.Variable;     // [convChannels]
  primaryKernel: tf.Variable; // [9, 9, convChannels, capsTypes*8]
  primaryBias: tf.Variable;  // [capsTypes*8]
  classWeights: tf.Variable; // [numPrimary, numClasses, 16, 8]
  private convIdx: tf.Tensor1D;
  private primaryIdx: tf.Tensor1D;

  constructor(config: ModelConfig = DEFAULT_CONFIG) {
    this.config = config;
    this.convChannels = Math.max(1, Math.round(256 * config.widthFactor));
    this.capsTypes = Math.max(1, Math.round(32 * config.widthFactor));
    this.convOut = config.inputSize - 9 + 1;
    this.primaryOut = Math.floor((this.convOut - 9) / 2) + 1;
    this.numPrimary = this.capsTypes * this.primaryOut * this.primaryOut;
    const s = config.seed;
    const glorot = (shape: number[], seed: number, fanIn: number) =>
      tf.variable(tf.randomUniform(shape, -Math.sqrt(3 / fanIn),
        Math.sqrt(3 / fanIn), "float32", seed));
    this.convKernel = glorot([9, 9, 1, this.convChannels], s + 1, 81);
    this.convBias = tf.variable(tf.zeros([this.convChannels]));
    this.primaryKernel = glorot(
      [9, 9, this.convChannels, this.capsTypes * this.primaryDim],
      s + 2, 81 * this.convChannels);
    this.primaryBias = tf.variable(tf.zeros([this.capsTypes * this.primaryDim]));
    this.classWeights = tf.variable(tf.randomNormal(
      [this.numPrimary, config.numClasses, this.classDim, this.primaryDim],
      0, 0.04, "float32", s + 3));
    this.convIdx = patchIndices(config.inputSize, config.inputSize, 9, 1);
    this.primaryIdx = patchIndices(this.convOut, this.convOut, 9, 2);
  }

  variables(): tf.Variable[] {
    return [this.convKernel, this.convBias, this.primaryKernel,
            this.primaryBias, this.classWeights];
  }

  /** images: [B, size, size, 1] in [0,1] -> class capsules [B, classes, 16]. */
  forward(images: tf.Tensor4D): tf.Tensor {
    const b = images.shape[0];
    const c1 = tf.relu(tf.add(
      conv2dViaMatMul(images, this.convKernel as tf.Tensor4D, 1, this.convIdx),
      this.convBias));
    const p = tf.add(
      conv2dViaMatMul(c1 as tf.Tensor4D, this.primaryKernel as tf.Tensor4D, 2,
        this.primaryIdx),
      this.primaryBias); // [B, 6, 6, types*8]
    const capsGrid = tf.reshape(p,
      [b, this.primaryOut, this.primaryOut, this.capsTypes, this.primaryDim]);
    const caps = tf.reshape(tf.transpose(capsGrid, [0, 3, 1, 2, 4]),
      [b, this.numPrimary, this.primaryDim]);
    const primary = squash(caps);
    // votes[b,i,j,o] = sum_d W[i,j,o,d] * primary[b,i,d], as one matMul
    // batched over the input capsules
    const classes = this.config.numClasses;
    const w3 = tf.reshape(this.classWeights,
      [this.numPrimary, classes * this.classDim, this.primaryDim]);
    const u3 = tf.transpose(primary, [1, 2, 0]); // [numPrimary, d, B]
    const votes = tf.transpose(
      tf.reshape(tf.matMul(w3, u3),
        [this.numPrimary, classes, this.classDim, b]),
      [3, 0, 1, 2]) as tf.Tensor4D; // [B, numPrimary, classes, 16]
    return dynamicRouting(votes, this.config.routingIterations);
  }

  /** Euclidean lengths of the class capsules: [B, classes]. */
  lengths(images: tf.Tensor4D): tf.Tensor {
    const caps = this.forward(images);
    return tf.sqrt(tf.sum(tf.square(caps), 2));
  }

  dispose(): void {
    for (const v of this.variables()) v.dispose();
    this.convIdx.dispose();
    this.primaryIdx.dispose();
  }
}

export function predictions(lengths: tf.Tensor): Int32Array {
  return tf.argMax(lengths, 1).dataSync() as Int32Array;
}
