#!/usr/bin/env node
/**
 * CLI: iqa-oracle-adapter --scorer NAME (--stdio | --port P)
 *      [--beta1 B1] [--beta2 B2] [--fail-after N] [--host H]
 */

import { parseArgs } from "node:util";
import { makeScorer, SCORER_NAMES } from "./scorers.js";
import { serveStdio, serveTcp } from "./server.js";

async function main(): Promise<number> {
  const { values } = parseArgs({
    options: {
      scorer: { type: "string" },
      stdio: { type: "boolean", default: false },
      port: { type: "string" },
      host: { type: "string", default: "127.0.0.1" },
      beta1: { type: "string", default: "0" },
      beta2: { type: "string", default: "10" },
      "fail-after": { type: "string", default: "0" },
    },
  });

  if (!values.scorer) {
    console.error(`--scorer is required (one of: ${SCORER_NAMES.join(", ")})`);
    return 2;
  }
  if (values.stdio === (values.port !== undefined)) {
    console.error("exactly one of --stdio or --port must be given");
    return 2;
  }
  const bounds = { beta1: Number(values.beta1), beta2: Number(values.beta2) };
  if (!Number.isFinite(bounds.beta1) || !Number.isFinite(bounds.beta2) || bounds.beta1 >= bounds.beta2) {
    console.error(`invalid bounds (${values.beta1}, ${values.beta2})`);
    return 2;
  }

  let scorer;
  try {
    scorer = makeScorer(values.scorer, bounds, Number(values["fail-after"]));
  } catch (err) {
    console.error(err instanceof Error ? err.message : String(err));
    return 2;
  }

  if (values.stdio) {
    await serveStdio(scorer, bounds);
    return 0;
  }
  try {
    const handle = await serveTcp(scorer, bounds, Number(values.port), values.host);
    console.error(`listening on ${values.host}:${handle.port}`);
    await new Promise(() => {}); // run until terminated
  } catch (err) {
    console.error(`cannot bind: ${err instanceof Error ? err.message : String(err)}`);
    return 1;
  }
  return 0;
}

main().then((code) => {
  if (code !== 0) process.exit(code);
});
