// Client-side review state: queue building, optimistic verdicts with
// rollback, reconciliation against the server, and export preview counts.

import type { ReviewApi } from './api.js';
import type {
  AnnotationView,
  Decision,
  QueueFilter,
  ReviewItem,
  VerdictState,
} from './types.js';

export type StateListener = () => void;

export function applyFilter(item: ReviewItem, filter: QueueFilter): ReviewItem {
  const annotations = item.annotations.filter((a) => {
    if (!a.reviewable) return true; // originals always shown (locked)
    if (filter.unreviewedOnly && a.verdict !== null) return false;
    if (filter.classId !== undefined && a.category_id !== filter.classId) return false;
    if (filter.minScore !== undefined && a.score < filter.minScore) return false;
    if (filter.maxScore !== undefined && a.score > filter.maxScore) return false;
    return true;
  });
  return { ...item, annotations };
}

export function nextVerdictState(current: VerdictState): VerdictState {
  // click cycle: pending -> accept -> reject -> pending
  if (current === null) return 'accept';
  if (current === 'accept') return 'reject';
  return null;
}

export function exportPreviewCount(items: ReviewItem[], mode: 'strict' | 'lenient'): number {
  let count = 0;
  for (const item of items) {
    for (const a of item.annotations) {
      if (!a.reviewable) {
        count += 1;
      } else if (a.verdict === 'accept') {
        count += 1;
      } else if (a.verdict === null && mode === 'lenient') {
        count += 1;
      }
    }
  }
  return count;
}

export class ReviewStore {
  items = new Map<number, ReviewItem>();
  queue: number[] = [];
  private inFlight = new Map<number, VerdictState>(); // annotation id -> previous state
  private listeners: StateListener[] = [];
  lastError: string | null = null;

  constructor(private api: ReviewApi) {}

  onChange(listener: StateListener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener();
  }

  /** Fetch all images plus their annotations, ordered by review progress
   * ascending (least-reviewed first, stable by image id). */
  async fetchQueue(filter: QueueFilter = {}): Promise<ReviewItem[]> {
    const summaries = await this.api.listImages();
    summaries.sort((a, b) => a.review_progress - b.review_progress || a.image_id - b.image_id);
    const out: ReviewItem[] = [];
    for (const summary of summaries) {
      const item = await this.api.fetchAnnotations(summary.image_id);
      this.items.set(item.image_id, item);
      out.push(applyFilter(item, filter));
    }
    this.queue = out.map((i) => i.image_id);
    this.emit();
    return out;
  }

  annotation(annotationId: number): AnnotationView | undefined {
    for (const item of this.items.values()) {
      const found = item.annotations.find((a) => a.id === annotationId);
      if (found) return found;
    }
    return undefined;
  }

  private setVerdict(annotationId: number, verdict: VerdictState): void {
    for (const item of this.items.values()) {
      const ann = item.annotations.find((a) => a.id === annotationId);
      if (ann) {
        ann.verdict = verdict;
        this.emit();
        return;
      }
    }
  }

  /** Optimistically apply a verdict, POST it, roll back on failure. */
  async submitVerdict(annotationId: number, decision: Decision, reviewer = 'ui'): Promise<boolean> {
    const ann = this.annotation(annotationId);
    if (!ann || !ann.reviewable) return false;
    const previous = ann.verdict;
    this.inFlight.set(annotationId, previous);
    this.setVerdict(annotationId, decision);
    try {
      await this.api.submitVerdict(annotationId, decision, reviewer);
      this.inFlight.delete(annotationId);
      this.lastError = null;
      return true;
    } catch (err) {
      this.setVerdict(annotationId, previous);
      this.inFlight.delete(annotationId);
      this.lastError = String(err);
      this.emit();
      return false;
    }
  }

  /** Re-fetch annotations so displayed verdicts reflect only what the
   * server acknowledged. */
  async reconcile(): Promise<void> {
    for (const imageId of [...this.items.keys()]) {
      const fresh = await this.api.fetchAnnotations(imageId);
      this.items.set(imageId, fresh);
    }
    this.emit();
  }

  counts(): { pending: number; accepted: number; rejected: number } {
    let pending = 0;
    let accepted = 0;
    let rejected = 0;
    for (const item of this.items.values()) {
      for (const a of item.annotations) {
        if (!a.reviewable) continue;
        if (a.verdict === 'accept') accepted += 1;
        else if (a.verdict === 'reject') rejected += 1;
        else pending += 1;
      }
    }
    return { pending, accepted, rejected };
  }

  previewCount(mode: 'strict' | 'lenient'): number {
    return exportPreviewCount([...this.items.values()], mode);
  }
}
