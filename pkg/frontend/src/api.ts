// Thin client for the review service HTTP/JSON protocol.

import type { Decision, ImageSummary, ReviewItem } from './types.js';

export class ServiceUnreachable extends Error {}
export class VerdictRejected extends Error {
  constructor(public code: string, message: string) {
    super(message);
  }
}

export interface ApiOptions {
  baseUrl?: string;
  fetchFn?: typeof fetch;
  retries?: number;
  backoffMs?: number;
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

export class ReviewApi {
  private baseUrl: string;
  private fetchFn: typeof fetch;
  private retries: number;
  private backoffMs: number;

  constructor(options: ApiOptions = {}) {
    this.baseUrl = (options.baseUrl ?? '').replace(/\/$/, '');
    this.fetchFn = options.fetchFn ?? fetch.bind(globalThis);
    this.retries = options.retries ?? 3;
    this.backoffMs = options.backoffMs ?? 250;
  }

  imageUrl(imageId: number): string {
    return `${this.baseUrl}/images/${imageId}`;
  }

  private async getJson<T>(path: string): Promise<T> {
    let lastError: unknown = null;
    for (let attempt = 0; attempt <= this.retries; attempt++) {
      try {
        const resp = await this.fetchFn(`${this.baseUrl}${path}`);
        if (!resp.ok) throw new ServiceUnreachable(`GET ${path}: ${resp.status}`);
        return (await resp.json()) as T;
      } catch (err) {
        lastError = err;
        if (attempt < this.retries) await sleep(this.backoffMs * 2 ** attempt);
      }
    }
    throw new ServiceUnreachable(String(lastError));
  }

  listImages(): Promise<ImageSummary[]> {
    return this.getJson<ImageSummary[]>('/images');
  }

  fetchAnnotations(imageId: number): Promise<ReviewItem> {
    return this.getJson<ReviewItem>(`/images/${imageId}/annotations`);
  }

  async submitVerdict(annotationId: number, decision: Decision, reviewer = 'ui'): Promise<void> {
    const resp = await this.fetchFn(`${this.baseUrl}/verdicts`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ annotation_id: annotationId, decision, reviewer }),
    });
    if (!resp.ok) {
      let code = 'Error';
      let message = `POST /verdicts: ${resp.status}`;
      try {
        const body = (await resp.json()) as { code?: string; message?: string };
        code = body.code ?? code;
        message = body.message ?? message;
      } catch {
        // keep defaults
      }
      throw new VerdictRejected(code, message);
    }
  }

  async exportDataset(path: string, mode: 'strict' | 'lenient'): Promise<number> {
    const resp = await this.fetchFn(`${this.baseUrl}/export`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ path, mode }),
    });
    if (!resp.ok) throw new ServiceUnreachable(`POST /export: ${resp.status}`);
    const body = (await resp.json()) as { n_annotations: number };
    return body.n_annotations;
  }
}
