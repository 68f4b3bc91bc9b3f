/**
 * Canonical one-line JSON: keys sorted, compact separators, raw UTF-8.
 * Matches the Python client's serialization byte-for-byte so recorded
 * sessions replay across implementations.
 *
 * Floats never pass through here as bare numbers; the protocol carries
 * them as pre-formatted strings (float17.ts). Bare numbers are only
 * allowed when integral.
 */

export type Json =
  | null
  | boolean
  | number
  | string
  | Json[]
  | { [key: string]: Json };

export function canonicalJson(value: Json): string {
  if (value === null) return "null";
  switch (typeof value) {
    case "boolean":
      return value ? "true" : "false";
    case "number":
      if (!Number.isInteger(value)) {
        throw new Error("non-integer numbers must be float strings on the wire");
      }
      return String(value);
    case "string":
      return JSON.stringify(value);
    default:
      break;
  }
  if (Array.isArray(value)) {
    return `[${value.map(canonicalJson).join(",")}]`;
  }
  const keys = Object.keys(value).sort();
  const parts = keys.map(
    (k) => `${JSON.stringify(k)}:${canonicalJson(value[k])}`
  );
  return `{${parts.join(",")}}`;
}

export function dumpLine(value: Json): string {
  return canonicalJson(value) + "\n";
}
