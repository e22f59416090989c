import * as fs from "fs";

export const IDX_IMAGES_MAGIC = 0x00000803;
export const IDX_LABELS_MAGIC = 0x00000801;

export interface Dataset {
  /** Pixel values already scaled into [0,1], row-major [n, h, w]. */
  images: Float32Array;
  labels: Uint8Array;
  n: number;
  h: number;
  w: number;
}

export function readIdx(imagesPath: string, labelsPath: string): Dataset {
  const ibuf = fs.readFileSync(imagesPath);
  const magic = ibuf.readUInt32BE(0);
  if (magic !== IDX_IMAGES_MAGIC) {
    throw new Error(`${imagesPath}: bad image magic 0x${magic.toString(16)}`);
  }
  const n = ibuf.readUInt32BE(4);
  const h = ibuf.readUInt32BE(8);
  const w = ibuf.readUInt32BE(12);
  if (ibuf.length !== 16 + n * h * w) {
    throw new Error(`${imagesPath}: expected ${n * h * w} pixel bytes, ` +
      `found ${ibuf.length - 16}`);
  }
  const images = new Float32Array(n * h * w);
  for (let i = 0; i < images.length; i++) {
    images[i] = ibuf[16 + i] / 255.0;
  }

  const lbuf = fs.readFileSync(labelsPath);
  const lmagic = lbuf.readUInt32BE(0);
  if (lmagic !== IDX_LABELS_MAGIC) {
    throw new Error(`${labelsPath}: bad label magic 0x${lmagic.toString(16)}`);
  }
  const nLabels = lbuf.readUInt32BE(4);
  if (nLabels !== n) {
    throw new Error(`count mismatch: ${n} images vs ${nLabels} labels`);
  }
  const labels = new Uint8Array(lbuf.subarray(8, 8 + nLabels));
  return { images, labels, n, h, w };
}

export function takeDataset(ds: Dataset, limit: number): Dataset {
  const n = Math.min(limit, ds.n);
  return {
    images: ds.images.subarray(0, n * ds.h * ds.w),
    labels: ds.labels.subarray(0, n),
    n,
    h: ds.h,
    w: ds.w,
  };
}
