import { describe, expect, it } from 'vitest';

import type { ReviewApi } from '../src/api.js';
import {
  ReviewStore,
  applyFilter,
  exportPreviewCount,
  nextVerdictState,
} from '../src/state.js';
import type { AnnotationView, ImageSummary, ReviewItem } from '../src/types.js';

function ann(partial: Partial<AnnotationView> & { id: number }): AnnotationView {
  return {
    bbox: [1, 1, 5, 5],
    category_id: 1,
    class_name: 'disc',
    score: 0.5,
    source: 'completed',
    reviewable: true,
    verdict: null,
    ...partial,
  };
}

function item(imageId: number, annotations: AnnotationView[]): ReviewItem {
  return { image_id: imageId, width: 64, height: 64, annotations };
}

class FakeApi {
  items = new Map<number, ReviewItem>();
  failNext = 0;
  verdictLog: Array<[number, string]> = [];

  async listImages(): Promise<ImageSummary[]> {
    return [...this.items.values()].map((i) => {
      const reviewable = i.annotations.filter((a) => a.reviewable);
      const reviewed = reviewable.filter((a) => a.verdict !== null).length;
      return {
        image_id: i.image_id,
        n_original: i.annotations.length - reviewable.length,
        n_completed: reviewable.length,
        review_progress: reviewable.length ? reviewed / reviewable.length : 1,
      };
    });
  }

  async fetchAnnotations(imageId: number): Promise<ReviewItem> {
    const found = this.items.get(imageId)!;
    return JSON.parse(JSON.stringify(found)) as ReviewItem;
  }

  async submitVerdict(annotationId: number, decision: 'accept' | 'reject'): Promise<void> {
    if (this.failNext > 0) {
      this.failNext -= 1;
      throw new Error('injected server error');
    }
    this.verdictLog.push([annotationId, decision]);
    for (const i of this.items.values()) {
      const a = i.annotations.find((x) => x.id === annotationId);
      if (a) a.verdict = decision;
    }
  }
}

const asApi = (fake: FakeApi) => fake as unknown as ReviewApi;

describe('applyFilter', () => {
  const base = item(1, [
    ann({ id: 1, reviewable: false, source: 'original' }),
    ann({ id: 2, score: 0.25 }),
    ann({ id: 3, score: 0.35, verdict: 'accept' }),
    ann({ id: 4, score: 0.9, category_id: 2 }),
  ]);

  it('min score 0.3 mirrors the completion threshold default', () => {
    const out = applyFilter(base, { minScore: 0.3 });
    expect(out.annotations.map((a) => a.id)).toEqual([1, 3, 4]);
  });

  it('unreviewed-only keeps pending completions and originals', () => {
    const out = applyFilter(base, { unreviewedOnly: true });
    expect(out.annotations.map((a) => a.id)).toEqual([1, 2, 4]);
  });

  it('class filter applies to reviewable boxes only', () => {
    const out = applyFilter(base, { classId: 2 });
    expect(out.annotations.map((a) => a.id)).toEqual([1, 4]);
  });
});

describe('verdict state machine', () => {
  it('cycles pending -> accept -> reject -> pending', () => {
    expect(nextVerdictState(null)).toBe('accept');
    expect(nextVerdictState('accept')).toBe('reject');
    expect(nextVerdictState('reject')).toBeNull();
  });
});

describe('export preview count', () => {
  const items = [
    item(1, [
      ann({ id: 1, reviewable: false, source: 'original' }),
      ann({ id: 2, verdict: 'accept' }),
      ann({ id: 3, verdict: 'reject' }),
      ann({ id: 4, verdict: null }),
    ]),
  ];

  it('strict counts originals plus accepts', () => {
    expect(exportPreviewCount(items, 'strict')).toBe(2);
  });

  it('lenient additionally counts unreviewed', () => {
    expect(exportPreviewCount(items, 'lenient')).toBe(3);
  });
});

describe('ReviewStore', () => {
  it('orders the queue by review progress ascending', async () => {
    const fake = new FakeApi();
    fake.items.set(1, item(1, [ann({ id: 10, verdict: 'accept' }), ann({ id: 11, verdict: null })]));
    fake.items.set(2, item(2, [ann({ id: 20, verdict: null })]));
    fake.items.set(3, item(3, [ann({ id: 30, verdict: 'accept' })]));
    const store = new ReviewStore(asApi(fake));
    const queue = await store.fetchQueue();
    expect(queue.map((i) => i.image_id)).toEqual([2, 1, 3]);
  });

  it('queue is stable across refreshes absent server changes', async () => {
    const fake = new FakeApi();
    fake.items.set(1, item(1, [ann({ id: 10 })]));
    fake.items.set(2, item(2, [ann({ id: 20 })]));
    const store = new ReviewStore(asApi(fake));
    const a = await store.fetchQueue();
    const b = await store.fetchQueue();
    expect(a.map((i) => i.image_id)).toEqual(b.map((i) => i.image_id));
  });

  it('applies verdicts optimistically and confirms on 200', async () => {
    const fake = new FakeApi();
    fake.items.set(1, item(1, [ann({ id: 10 })]));
    const store = new ReviewStore(asApi(fake));
    await store.fetchQueue();
    const ok = await store.submitVerdict(10, 'accept');
    expect(ok).toBe(true);
    expect(store.annotation(10)?.verdict).toBe('accept');
    expect(fake.verdictLog).toEqual([[10, 'accept']]);
  });

  it('rolls back on server error', async () => {
    const fake = new FakeApi();
    fake.items.set(1, item(1, [ann({ id: 10, verdict: 'reject' })]));
    const store = new ReviewStore(asApi(fake));
    await store.fetchQueue();
    fake.failNext = 1;
    const ok = await store.submitVerdict(10, 'accept');
    expect(ok).toBe(false);
    expect(store.annotation(10)?.verdict).toBe('reject');
    expect(store.lastError).toContain('injected');
  });

  it('refuses to submit verdicts on locked originals', async () => {
    const fake = new FakeApi();
    fake.items.set(1, item(1, [ann({ id: 10, reviewable: false, source: 'original' })]));
    const store = new ReviewStore(asApi(fake));
    await store.fetchQueue();
    const ok = await store.submitVerdict(10, 'accept');
    expect(ok).toBe(false);
    expect(fake.verdictLog).toEqual([]);
  });

  it('reconcile restores the server-acknowledged state', async () => {
    const fake = new FakeApi();
    fake.items.set(1, item(1, [ann({ id: 10 }), ann({ id: 11 })]));
    const store = new ReviewStore(asApi(fake));
    await store.fetchQueue();
    await store.submitVerdict(10, 'accept');
    // locally poke a verdict the server never saw
    store.annotation(11)!.verdict = 'reject';
    await store.reconcile();
    expect(store.annotation(10)?.verdict).toBe('accept');
    expect(store.annotation(11)?.verdict).toBeNull();
    expect(store.counts()).toEqual({ pending: 1, accepted: 1, rejected: 0 });
  });
});
