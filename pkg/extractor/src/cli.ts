#!/usr/bin/env node
/**
 * extract --images DIR --prompts FILE --encoder NAME --out DIR
 *
 * Encodes a folder-per-class image tree plus a prompt JSON file into the
 * binary embedding directories the classifier consumes. Exit codes follow
 * the primary CLI: 0 ok, 2 validation error, 3 data error; errors are
 * machine-readable JSON on stderr.
 */

import { extract } from "./extract";

interface CliArgs {
  images: string;
  prompts: string;
  encoder: string;
  out: string;
  promptsOut?: string;
}

const USAGE =
  "usage: extract --images DIR --prompts FILE --encoder NAME --out DIR [--prompts-out DIR]";

class ArgError extends Error {}

function parseArgs(argv: string[]): CliArgs {
  const values = new Map<string, string>();
  let key: string | null = null;
  for (const token of argv) {
    if (token === "--help" || token === "-h") {
      console.log(USAGE);
      process.exit(0);
    }
    if (token.startsWith("--")) {
      if (key !== null) {
        throw new ArgError(`flag ${key} is missing a value`);
      }
      key = token.slice(2);
    } else if (key !== null) {
      values.set(key, token);
      key = null;
    } else {
      throw new ArgError(`unexpected argument ${JSON.stringify(token)}`);
    }
  }
  if (key !== null) {
    throw new ArgError(`flag --${key} is missing a value`);
  }
  const known = new Set(["images", "prompts", "encoder", "out", "prompts-out"]);
  for (const flag of values.keys()) {
    if (!known.has(flag)) {
      throw new ArgError(`unknown flag --${flag}`);
    }
  }
  for (const required of ["images", "prompts", "out"]) {
    if (!values.has(required)) {
      throw new ArgError(`missing required flag --${required}`);
    }
  }
  return {
    images: values.get("images")!,
    prompts: values.get("prompts")!,
    encoder: values.get("encoder") ?? "dev-proj-512",
    out: values.get("out")!,
    promptsOut: values.get("prompts-out"),
  };
}

function fail(kind: string, message: string, code: number): never {
  process.stderr.write(
    JSON.stringify({ error: { type: kind, message, exit_code: code } }) + "\n"
  );
  process.exit(code);
}

export function main(argv: string[]): void {
  let args: CliArgs;
  try {
    args = parseArgs(argv);
  } catch (err) {
    fail("ValidationError", `${(err as Error).message}\n${USAGE}`, 2);
  }
  try {
    const result = extract({
      imagesRoot: args.images,
      promptsPath: args.prompts,
      encoderName: args.encoder,
      outDir: args.out,
      promptOutDir: args.promptsOut,
    });
    process.stdout.write(
      JSON.stringify(
        {
          command: "extract",
          effective_config: {
            images: args.images,
            prompts: args.prompts,
            encoder: args.encoder,
            out: args.out,
            prompts_out: result.prompts.outDir,
          },
          result: {
            classes: result.images.classes.length,
            image_rows: result.images.rows,
            prompt_rows: result.prompts.rows,
            dim: result.images.dim,
            skipped: result.images.skipped,
          },
        },
        null,
        2
      ) + "\n"
    );
  } catch (err) {
    const message = (err as Error).message;
    const validation = /unknown encoder|dimension out of range|missing required/.test(message);
    fail(validation ? "ValidationError" : "DataError", message, validation ? 2 : 3);
  }
}

if (require.main === module) {
  main(process.argv.slice(2));
}
