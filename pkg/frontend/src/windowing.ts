// Client-side window/level on the fetched slice PNG. The server always
// renders full-range 8-bit slices (deterministic, cacheable); contrast
// interaction happens here by re-mapping gray values on a canvas.

export interface WindowLevel {
  window: number; // width of the displayed intensity band, 1..255
  level: number; // center of the band, 0..255
}

export const FULL_RANGE: WindowLevel = { window: 255, level: 127.5 };

export function mapGray(value: number, wl: WindowLevel): number {
  const lo = wl.level - wl.window / 2;
  const t = ((value - lo) / wl.window) * 255;
  return Math.max(0, Math.min(255, Math.round(t)));
}

/** Re-map RGBA pixel data in place (gray PNGs have r = g = b). */
export function applyWindowLevel(rgba: Uint8ClampedArray, wl: WindowLevel): void {
  for (let i = 0; i < rgba.length; i += 4) {
    const v = mapGray(rgba[i], wl);
    rgba[i] = v;
    rgba[i + 1] = v;
    rgba[i + 2] = v;
  }
}

/** Redraw an already-loaded slice image through a window/level mapping.
 * No-op where canvas 2D is unavailable (e.g. DOM test environments). */
export function drawWindowed(
  img: HTMLImageElement,
  canvas: HTMLCanvasElement,
  wl: WindowLevel,
): boolean {
  const ctx = canvas.getContext && canvas.getContext("2d");
  if (!ctx || !img.naturalWidth) return false;
  canvas.width = img.naturalWidth;
  canvas.height = img.naturalHeight;
  ctx.drawImage(img, 0, 0);
  const data = ctx.getImageData(0, 0, canvas.width, canvas.height);
  applyWindowLevel(data.data, wl);
  ctx.putImageData(data, 0, 0);
  return true;
}
