/** Run-length mask coding, mirroring the service's wire format.
 *
 * Counts alternate starting with background over the row-major flattened
 * mask; the first count may be 0 when the mask begins with foreground,
 * every later count is positive.
 */

export interface Rle {
  counts: number[];
  size: [number, number];
}

export class RleError extends Error {}

export function decodeRle(rle: Rle): Uint8Array {
  const [h, w] = rle.size;
  if (!Number.isInteger(h) || !Number.isInteger(w) || h < 0 || w < 0) {
    throw new RleError(`bad rle size ${JSON.stringify(rle.size)}`);
  }
  const total = h * w;
  const out = new Uint8Array(total);
  let pos = 0;
  let value = 0;
  for (const c of rle.counts) {
    if (!Number.isInteger(c) || c < 0) {
      throw new RleError(`counts must be non-negative integers, got ${c}`);
    }
    if (value) {
      out.fill(1, pos, pos + c);
    }
    pos += c;
    value ^= 1;
  }
  if (pos !== total) {
    throw new RleError(`counts sum to ${pos}, expected ${total}`);
  }
  return out;
}

export function encodeRle(
  mask: ArrayLike<number>,
  height: number,
  width: number,
): Rle {
  if (mask.length !== height * width) {
    throw new RleError(
      `mask length ${mask.length} does not match ${height}x${width}`,
    );
  }
  const counts: number[] = [];
  if (mask.length === 0) {
    return { counts, size: [0, 0] };
  }
  if (mask[0]) {
    counts.push(0);
  }
  let run = 1;
  for (let i = 1; i < mask.length; i++) {
    if (!mask[i] === !mask[i - 1]) {
      run++;
    } else {
      counts.push(run);
      run = 1;
    }
  }
  counts.push(run);
  return { counts, size: [height, width] };
}

/** Foreground pixel count of a decoded mask. */
export function maskArea(mask: Uint8Array): number {
  let area = 0;
  for (let i = 0; i < mask.length; i++) {
    area += mask[i]!;
  }
  return area;
}
