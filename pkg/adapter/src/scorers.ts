/**
 * Built-in scorers.  `reference-mean` maps the tensor mean linearly onto the
 * score bounds and exists so cross-language equivalence with an in-process
 * implementation can be asserted; `flaky-mean` wraps it with fault injection
 * for abort-handling tests.  Real model adapters are user-supplied callables
 * with the same (h, w, c, data) -> number signature.
 */

import type { Bounds, Scorer } from "./protocol.js";

export function referenceMean(bounds: Bounds): Scorer {
  return (h, w, c, data) => {
    let sum = 0;
    for (let i = 0; i < data.length; i++) {
      sum += data[i];
    }
    const mean = sum / (h * w * c);
    return bounds.beta1 + (bounds.beta2 - bounds.beta1) * mean;
  };
}

/** Scores like referenceMean, then throws on every call past `failAfter`. */
export function flakyMean(bounds: Bounds, failAfter: number): Scorer {
  const inner = referenceMean(bounds);
  let calls = 0;
  return (h, w, c, data) => {
    calls += 1;
    if (calls > failAfter) {
      throw new Error(`scorer failed on call ${calls}`);
    }
    return inner(h, w, c, data);
  };
}

export function makeScorer(
  name: string,
  bounds: Bounds,
  failAfter: number,
): Scorer {
  switch (name) {
    case "reference-mean":
      return referenceMean(bounds);
    case "flaky-mean":
      return flakyMean(bounds, failAfter);
    default:
      throw new Error(`unknown scorer '${name}'`);
  }
}

export const SCORER_NAMES = ["reference-mean", "flaky-mean"] as const;
