// Single-page review client: queue sidebar, canvas with overlays, keyboard
// flow. Served statically by the review service.

import { ReviewApi } from './api.js';
import { bindKeyboard } from './keyboard.js';
import {
  fitTransform,
  hitTest,
  pan,
  renderOverlay,
  zoomAt,
} from './overlay.js';
import { ReviewStore, nextVerdictState } from './state.js';
import type { QueueFilter, ReviewItem, ViewTransform } from './types.js';

const api = new ReviewApi({ baseUrl: '' });
const store = new ReviewStore(api);

const canvas = document.getElementById('view') as HTMLCanvasElement;
const ctx = canvas.getContext('2d')!;
const queueEl = document.getElementById('queue')!;
const statusEl = document.getElementById('status')!;
const bannerEl = document.getElementById('banner')!;
const filterUnreviewed = document.getElementById('filter-unreviewed') as HTMLInputElement;
const filterMinScore = document.getElementById('filter-min-score') as HTMLInputElement;
const exportMode = document.getElementById('export-mode') as HTMLSelectElement;
const exportBtn = document.getElementById('export-btn') as HTMLButtonElement;
const previewEl = document.getElementById('preview-count')!;

let currentImage: number | null = null;
let transform: ViewTransform = { scale: 1, offsetX: 0, offsetY: 0 };
let hoverId: number | null = null;
let focusIndex = 0;
let bitmap: ImageBitmap | null = null;

function currentItem(): ReviewItem | null {
  return currentImage === null ? null : store.items.get(currentImage) ?? null;
}

function reviewableIds(item: ReviewItem): number[] {
  return item.annotations.filter((a) => a.reviewable).map((a) => a.id);
}

function filter(): QueueFilter {
  const f: QueueFilter = {};
  if (filterUnreviewed.checked) f.unreviewedOnly = true;
  const min = parseFloat(filterMinScore.value);
  if (!Number.isNaN(min)) f.minScore = min;
  return f;
}

function draw(): void {
  const item = currentItem();
  if (!item) return;
  const ids = reviewableIds(item);
  const selectedId = ids.length ? ids[Math.min(focusIndex, ids.length - 1)] : null;
  renderOverlay(ctx, bitmap, item, transform, { hoverId, selectedId });
  const counts = store.counts();
  statusEl.textContent =
    `image ${item.image_id} | pending ${counts.pending} ` +
    `accepted ${counts.accepted} rejected ${counts.rejected}`;
  previewEl.textContent = String(store.previewCount(exportMode.value as 'strict' | 'lenient'));
}

async function openImage(imageId: number): Promise<void> {
  currentImage = imageId;
  focusIndex = 0;
  const item = store.items.get(imageId);
  if (!item) return;
  try {
    const resp = await fetch(api.imageUrl(imageId));
    bitmap = await createImageBitmap(await resp.blob());
  } catch {
    bitmap = null; // placeholder: boxes still render
  }
  transform = fitTransform(item.width, item.height, canvas.width, canvas.height);
  draw();
}

function renderQueue(items: ReviewItem[]): void {
  queueEl.innerHTML = '';
  for (const item of items) {
    const li = document.createElement('li');
    const reviewable = item.annotations.filter((a) => a.reviewable);
    const reviewed = reviewable.filter((a) => a.verdict !== null).length;
    li.textContent = `#${item.image_id} (${reviewed}/${reviewable.length})`;
    li.onclick = () => void openImage(item.image_id);
    if (item.image_id === currentImage) li.classList.add('active');
    queueEl.appendChild(li);
  }
}

async function refreshQueue(): Promise<void> {
  try {
    bannerEl.textContent = '';
    const items = await store.fetchQueue(filter());
    renderQueue(items);
    if (items.length && currentImage === null) await openImage(items[0].image_id);
    if (!items.length) bannerEl.textContent = 'no completions to review';
    draw();
  } catch (err) {
    bannerEl.textContent = `service unreachable, retrying… (${String(err)})`;
    setTimeout(() => void refreshQueue(), 2000);
  }
}

async function decide(decision: 'accept' | 'reject'): Promise<void> {
  const item = currentItem();
  if (!item) return;
  const ids = reviewableIds(item);
  if (!ids.length) return;
  const id = ids[Math.min(focusIndex, ids.length - 1)];
  const ok = await store.submitVerdict(id, decision);
  if (!ok) bannerEl.textContent = `verdict rejected: ${store.lastError}`;
  draw();
}

canvas.addEventListener('mousemove', (ev) => {
  const item = currentItem();
  if (!item) return;
  const rect = canvas.getBoundingClientRect();
  hoverId = hitTest(item, transform, ev.clientX - rect.left, ev.clientY - rect.top);
  draw();
});

canvas.addEventListener('click', (ev) => {
  const item = currentItem();
  if (!item) return;
  const rect = canvas.getBoundingClientRect();
  const id = hitTest(item, transform, ev.clientX - rect.left, ev.clientY - rect.top);
  if (id === null) return; // originals and background: no state change
  const ann = item.annotations.find((a) => a.id === id)!;
  const next = nextVerdictState(ann.verdict);
  if (next === null) {
    ann.verdict = null; // back to pending is purely local until next verdict
    draw();
  } else {
    void store.submitVerdict(id, next).then(draw);
  }
});

canvas.addEventListener('wheel', (ev) => {
  ev.preventDefault();
  const rect = canvas.getBoundingClientRect();
  transform = zoomAt(
    transform,
    ev.clientX - rect.left,
    ev.clientY - rect.top,
    ev.deltaY < 0 ? 1.2 : 1 / 1.2,
  );
  draw();
});

bindKeyboard(window, {
  accept: () => void decide('accept'),
  reject: () => void decide('reject'),
  next: () => {
    const item = currentItem();
    if (!item) return;
    focusIndex = Math.min(focusIndex + 1, Math.max(reviewableIds(item).length - 1, 0));
    draw();
  },
  prev: () => {
    focusIndex = Math.max(focusIndex - 1, 0);
    draw();
  },
  nextImage: () => {
    const idx = store.queue.indexOf(currentImage ?? -1);
    if (idx >= 0 && idx + 1 < store.queue.length) void openImage(store.queue[idx + 1]);
  },
  prevImage: () => {
    const idx = store.queue.indexOf(currentImage ?? -1);
    if (idx > 0) void openImage(store.queue[idx - 1]);
  },
  zoomIn: () => {
    transform = zoomAt(transform, canvas.width / 2, canvas.height / 2, 1.2);
    draw();
  },
  zoomOut: () => {
    transform = zoomAt(transform, canvas.width / 2, canvas.height / 2, 1 / 1.2);
    draw();
  },
});

let dragging = false;
let lastX = 0;
let lastY = 0;
canvas.addEventListener('mousedown', (ev) => {
  dragging = true;
  lastX = ev.clientX;
  lastY = ev.clientY;
});
window.addEventListener('mouseup', () => {
  dragging = false;
});
window.addEventListener('mousemove', (ev) => {
  if (!dragging) return;
  transform = pan(transform, ev.clientX - lastX, ev.clientY - lastY);
  lastX = ev.clientX;
  lastY = ev.clientY;
  draw();
});

filterUnreviewed.addEventListener('change', () => void refreshQueue());
filterMinScore.addEventListener('change', () => void refreshQueue());
exportMode.addEventListener('change', draw);
exportBtn.addEventListener('click', () => {
  const path = prompt('export path on the server', 'reviewed.json');
  if (!path) return;
  void api
    .exportDataset(path, exportMode.value as 'strict' | 'lenient')
    .then((n) => {
      bannerEl.textContent = `exported ${n} annotations to ${path}`;
    })
    .catch((err) => {
      bannerEl.textContent = `export failed: ${String(err)}`;
    });
});

store.onChange(draw);
void refreshQueue();
