/**
 * Wire float formatting: the exact equivalent of C's "%.17g" for doubles.
 *
 * Up to 17 significant digits (enough to round-trip any double), trailing
 * zeros stripped, exponent notation for decimal exponents < -4 or >= 17
 * with a signed, zero-padded (>= 2 digit) exponent. Must stay byte-equal
 * to the Python side; see the pinned cases in test/float17.test.ts.
 */

export function formatFloat17(x: number): string {
  if (!Number.isFinite(x)) {
    throw new Error("wire floats must be finite");
  }
  if (x === 0) {
    return Object.is(x, -0) ? "-0" : "0";
  }
  const neg = x < 0;
  const abs = Math.abs(x);
  const [mantissaRaw, expRaw] = abs.toExponential(16).split("e");
  const exponent = parseInt(expRaw, 10);
  let digits = mantissaRaw.replace(".", "").replace(/0+$/, "");
  if (digits === "") digits = "0";

  let out: string;
  if (exponent < -4 || exponent >= 17) {
    const mantissa =
      digits.length === 1 ? digits : `${digits[0]}.${digits.slice(1)}`;
    const sign = exponent < 0 ? "-" : "+";
    const magnitude = String(Math.abs(exponent)).padStart(2, "0");
    out = `${mantissa}e${sign}${magnitude}`;
  } else if (exponent >= digits.length - 1) {
    out = digits + "0".repeat(exponent - (digits.length - 1));
  } else if (exponent >= 0) {
    out = `${digits.slice(0, exponent + 1)}.${digits.slice(exponent + 1)}`;
  } else {
    out = `0.${"0".repeat(-exponent - 1)}${digits}`;
  }
  return neg ? `-${out}` : out;
}

export function parseFloat17(text: string): number {
  const value = Number(text);
  if (text.trim() === "" || Number.isNaN(value) || !Number.isFinite(value)) {
    throw new Error(`bad float string ${JSON.stringify(text)}`);
  }
  return value;
}

export const encodeFloats = (values: number[]): string[] =>
  values.map(formatFloat17);
