// Mirrors the review service JSON payloads exactly.

export type Source = 'original' | 'completed' | 'pseudo' | 'accepted' | 'rejected';
export type Decision = 'accept' | 'reject';
export type VerdictState = Decision | null;

export interface ImageSummary {
  image_id: number;
  n_original: number;
  n_completed: number;
  review_progress: number;
}

export interface AnnotationView {
  id: number;
  bbox: [number, number, number, number]; // x, y, w, h in image pixels
  category_id: number;
  class_name: string;
  score: number;
  source: Source;
  reviewable: boolean;
  verdict: VerdictState;
}

export interface ReviewItem {
  image_id: number;
  width: number;
  height: number;
  annotations: AnnotationView[];
}

export interface QueueFilter {
  unreviewedOnly?: boolean;
  classId?: number;
  minScore?: number;
  maxScore?: number;
}

export interface ViewTransform {
  // canvas = image * scale + offset
  scale: number;
  offsetX: number;
  offsetY: number;
}
