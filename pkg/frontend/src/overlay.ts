/** Pure pixel blending for mask overlays, kept DOM-free so it can be unit
 * tested without a canvas. */

/** Blend a mask into an RGBA buffer in place.
 *
 * Prediction masks paint green, ground truth paints red (pass the color).
 * `opacity` in [0, 1] controls how strongly mask pixels tint the image;
 * pixels outside the mask are untouched.
 */
export function paintOverlay(
  rgba: Uint8ClampedArray,
  mask: Uint8Array,
  color: [number, number, number],
  opacity: number,
): void {
  if (rgba.length !== mask.length * 4) {
    throw new Error(
      `buffer has ${rgba.length / 4} pixels, mask has ${mask.length}`,
    );
  }
  const a = Math.min(1, Math.max(0, opacity));
  for (let i = 0; i < mask.length; i++) {
    if (!mask[i]) {
      continue;
    }
    const o = i * 4;
    rgba[o] = Math.round(rgba[o]! * (1 - a) + color[0] * a);
    rgba[o + 1] = Math.round(rgba[o + 1]! * (1 - a) + color[1] * a);
    rgba[o + 2] = Math.round(rgba[o + 2]! * (1 - a) + color[2] * a);
  }
}

export const PRED_COLOR: [number, number, number] = [0, 200, 70];
export const GT_COLOR: [number, number, number] = [220, 40, 40];
