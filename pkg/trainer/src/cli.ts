import * as fs from "fs";

import { readIdx, takeDataset } from "./idx";
import { DEFAULT_CONFIG } from "./model";
import { exportModel } from "./export";
import { DEFAULT_TRAIN_SPEC, accuracy, train } from "./train";

interface Args {
  [key: string]: string;
}

function parseArgs(argv: string[]): Args {
  const out: Args = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) {
      throw new Error(`unexpected argument ${arg}`);
    }
    const key = arg.slice(2);
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--")) {
      throw new Error(`flag --${key} needs a value`);
    }
    out[key] = value;
    i++;
  }
  return out;
}

function required(args: Args, key: string): string {
  const v = args[key];
  if (v === undefined) throw new Error(`missing required flag --${key}`);
  return v;
}

function numberFlag(args: Args, key: string, fallback: number): number {
  const v = args[key];
  if (v === undefined) return fallback;
  const parsed = Number(v);
  if (!Number.isFinite(parsed)) throw new Error(`bad numeric value for --${key}: ${v}`);
  return parsed;
}

const USAGE = `usage: node dist/cli.js \\
  --train-images F --train-labels F --test-images F --test-labels F \\
  --manifest OUT --blob OUT --arch OUT [--metrics OUT.json] \\
  [--width 0.125] [--epochs 3] [--batch 50] [--seed 0] [--limit N] \\
  [--lr 0.001] [--decay-steps 2000] [--decay-rate 0.96] [--routing-iters 3]

Trains the width-scaled capsule reference network in full precision and
exports the weights for the inference engine.`;

export function main(argv: string[]): number {
  if (argv.includes("--help") || argv.length === 0) {
    console.log(USAGE);
    return 0;
  }
  const args = parseArgs(argv);
  const config = {
    ...DEFAULT_CONFIG,
    widthFactor: numberFlag(args, "width", DEFAULT_CONFIG.widthFactor),
    routingIterations: numberFlag(args, "routing-iters",
      DEFAULT_CONFIG.routingIterations),
    seed: numberFlag(args, "seed", 0),
  };
  const spec = {
    ...DEFAULT_TRAIN_SPEC,
    epochs: numberFlag(args, "epochs", DEFAULT_TRAIN_SPEC.epochs),
    batchSize: numberFlag(args, "batch", DEFAULT_TRAIN_SPEC.batchSize),
    initialLearningRate: numberFlag(args, "lr",
      DEFAULT_TRAIN_SPEC.initialLearningRate),
    decaySteps: numberFlag(args, "decay-steps", DEFAULT_TRAIN_SPEC.decaySteps),
    decayRate: numberFlag(args, "decay-rate", DEFAULT_TRAIN_SPEC.decayRate),
    seed: numberFlag(args, "seed", 0),
    logEvery: numberFlag(args, "log-every", 10),
  };

  let trainData = readIdx(required(args, "train-images"),
    required(args, "train-labels"));
  const limit = numberFlag(args, "limit", 0);
  if (limit > 0) trainData = takeDataset(trainData, limit);
  const testData = readIdx(required(args, "test-images"),
    required(args, "test-labels"));

  console.log(`training width=${config.widthFactor} on ${trainData.n} samples, ` +
    `${spec.epochs} epochs, batch ${spec.batchSize}, seed ${spec.seed}`);
  const started = Date.now();
  const result = train(config, spec, trainData, (msg) => console.log(msg));
  const trainAcc = accuracy(result.model, trainData);
  const testAcc = accuracy(result.model, testData);
  const seconds = (Date.now() - started) / 1000;
  console.log(`done in ${seconds.toFixed(1)}s: final loss ${result.finalLoss.toFixed(4)}, ` +
    `train accuracy ${trainAcc.toFixed(4)}, test accuracy ${testAcc.toFixed(4)}`);

  exportModel(result.model, {
    manifest: required(args, "manifest"),
    blob: required(args, "blob"),
    arch: required(args, "arch"),
  });
  console.log(`weights exported to ${args["manifest"]} / ${args["blob"]}`);

  if (args["metrics"]) {
    const totalParams = result.model.variables()
      .map((v) => v.size).reduce((a, b) => a + b, 0);
    fs.writeFileSync(args["metrics"], JSON.stringify({
      testAccuracy: testAcc,
      trainAccuracy: trainAcc,
      finalLoss: result.finalLoss,
      steps: result.steps,
      trainSamples: trainData.n,
      testSamples: testData.n,
      totalParams,
      fp32WeightBits: 32 * totalParams,
      seconds,
    }, null, 2) + "\n");
  }
  result.model.dispose();
  return 0;
}

if (require.main === module) {
  try {
    process.exit(main(process.argv.slice(2)));
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    process.exit(1);
  }
}
