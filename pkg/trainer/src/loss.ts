import * as tf from "@tensorflow/tfjs";

export const M_PLUS = 0.9;
export const M_MINUS = 0.1;
export const LAMBDA_ABSENT = 0.5;

/** Margin loss over capsule lengths [B, classes] and one-hot targets:
 * present classes are pushed above 0.9, absent ones below 0.1 (with the
 * absent term down-weighted by 0.5). Mean over the batch. */
export function marginLoss(lengths: tf.Tensor, oneHot: tf.Tensor): tf.Scalar {
  const present = tf.mul(oneHot,
    tf.square(tf.relu(tf.sub(M_PLUS, lengths))));
  const absent = tf.mul(tf.sub(1, oneHot),
    tf.square(tf.relu(tf.sub(lengths, M_MINUS))));
  const perSample = tf.sum(tf.add(present, tf.mul(LAMBDA_ABSENT, absent)), 1);
  return tf.mean(perSample) as tf.Scalar;
}
