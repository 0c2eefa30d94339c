/**
 * Prompt file loading: a JSON object mapping class name to a non-empty
 * array of non-empty description strings.
 */

import * as fs from "node:fs";

export type PromptMap = Map<string, string[]>;

export function loadPrompts(file: string): PromptMap {
  if (!fs.existsSync(file)) {
    throw new Error(`prompt file not found: ${file}`);
  }
  let parsed: unknown;
  try {
    parsed = JSON.parse(fs.readFileSync(file, "utf-8"));
  } catch (err) {
    throw new Error(`prompt file ${file} is not valid JSON: ${(err as Error).message}`);
  }
  if (parsed === null || typeof parsed !== "object" || Array.isArray(parsed)) {
    throw new Error(`prompt file ${file} must be an object mapping class name to strings`);
  }
  const prompts: PromptMap = new Map();
  for (const [name, value] of Object.entries(parsed)) {
    if (!Array.isArray(value) || value.length === 0) {
      throw new Error(`class ${JSON.stringify(name)} needs a non-empty array of prompts`);
    }
    for (const entry of value) {
      if (typeof entry !== "string" || entry.trim().length === 0) {
        throw new Error(`class ${JSON.stringify(name)} contains an empty prompt string`);
      }
    }
    prompts.set(name, value as string[]);
  }
  return prompts;
}

/** Every class must have prompts; extra prompt keys are tolerated. */
export function requireClasses(prompts: PromptMap, classes: string[]): void {
  const missing = classes.filter((name) => !prompts.has(name));
  if (missing.length > 0) {
    throw new Error(`prompt file is missing classes: ${missing.join(", ")}`);
  }
}
