// Canvas overlay: draws locked originals and verdict-colored completions,
// with zoom/pan transforms and box hit-testing for dense scenes.

import type { AnnotationView, ReviewItem, ViewTransform } from './types.js';

export const COLORS = {
  original: '#9e9e9e',
  pending: '#ffb300',
  accept: '#43a047',
  reject: '#e53935',
  hover: '#29b6f6',
};

export function boxColor(a: AnnotationView): string {
  if (!a.reviewable) return COLORS.original;
  if (a.verdict === 'accept') return COLORS.accept;
  if (a.verdict === 'reject') return COLORS.reject;
  return COLORS.pending;
}

export function imageToCanvas(
  t: ViewTransform,
  x: number,
  y: number,
): [number, number] {
  return [x * t.scale + t.offsetX, y * t.scale + t.offsetY];
}

export function canvasToImage(
  t: ViewTransform,
  cx: number,
  cy: number,
): [number, number] {
  return [(cx - t.offsetX) / t.scale, (cy - t.offsetY) / t.scale];
}

export function zoomAt(t: ViewTransform, canvasX: number, canvasY: number, factor: number): ViewTransform {
  const scale = Math.min(Math.max(t.scale * factor, 0.25), 32);
  const ratio = scale / t.scale;
  return {
    scale,
    offsetX: canvasX - (canvasX - t.offsetX) * ratio,
    offsetY: canvasY - (canvasY - t.offsetY) * ratio,
  };
}

export function pan(t: ViewTransform, dx: number, dy: number): ViewTransform {
  return { ...t, offsetX: t.offsetX + dx, offsetY: t.offsetY + dy };
}

export function fitTransform(
  imageW: number,
  imageH: number,
  canvasW: number,
  canvasH: number,
): ViewTransform {
  const scale = Math.min(canvasW / imageW, canvasH / imageH);
  return {
    scale,
    offsetX: (canvasW - imageW * scale) / 2,
    offsetY: (canvasH - imageH * scale) / 2,
  };
}

/** Smallest reviewable box containing the canvas point wins; originals are
 * not hit-targets (they are locked). Returns the annotation id or null. */
export function hitTest(
  item: ReviewItem,
  t: ViewTransform,
  canvasX: number,
  canvasY: number,
): number | null {
  const [ix, iy] = canvasToImage(t, canvasX, canvasY);
  let best: AnnotationView | null = null;
  for (const a of item.annotations) {
    if (!a.reviewable) continue;
    const [x, y, w, h] = a.bbox;
    if (ix >= x && ix <= x + w && iy >= y && iy <= y + h) {
      if (best === null || w * h < best.bbox[2] * best.bbox[3]) best = a;
    }
  }
  return best ? best.id : null;
}

export interface OverlayOptions {
  hoverId?: number | null;
  selectedId?: number | null;
  showScores?: boolean;
}

export function renderOverlay(
  ctx: CanvasRenderingContext2D,
  image: CanvasImageSource | null,
  item: ReviewItem,
  t: ViewTransform,
  options: OverlayOptions = {},
): void {
  ctx.save();
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  ctx.imageSmoothingEnabled = false;
  if (image) {
    ctx.drawImage(
      image,
      t.offsetX,
      t.offsetY,
      item.width * t.scale,
      item.height * t.scale,
    );
  }
  for (const a of item.annotations) {
    const [x, y, w, h] = a.bbox;
    const [cx, cy] = imageToCanvas(t, x, y);
    const isHover = options.hoverId === a.id;
    const isSelected = options.selectedId === a.id;
    ctx.lineWidth = isSelected ? 3 : isHover ? 2.5 : a.reviewable ? 2 : 1;
    ctx.strokeStyle = isHover ? COLORS.hover : boxColor(a);
    ctx.setLineDash(a.reviewable ? [] : [4, 3]);
    ctx.strokeRect(cx, cy, w * t.scale, h * t.scale);
    if ((isHover || isSelected) && options.showScores !== false) {
      const label = `${a.class_name} ${a.score.toFixed(2)}`;
      ctx.setLineDash([]);
      ctx.font = '12px sans-serif';
      const tw = ctx.measureText(label).width;
      ctx.fillStyle = 'rgba(0,0,0,0.75)';
      ctx.fillRect(cx, cy - 16, tw + 8, 16);
      ctx.fillStyle = '#fff';
      ctx.fillText(label, cx + 4, cy - 4);
    }
  }
  ctx.restore();
}
