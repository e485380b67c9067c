// Keyboard-only review flow: a/r decide the focused box, space advances,
// arrows pan, +/- zoom.

export interface KeyboardActions {
  accept(): void;
  reject(): void;
  next(): void;
  prev(): void;
  nextImage(): void;
  prevImage(): void;
  zoomIn(): void;
  zoomOut(): void;
}

export const KEY_BINDINGS: Record<string, keyof KeyboardActions> = {
  a: 'accept',
  r: 'reject',
  ' ': 'next',
  n: 'next',
  p: 'prev',
  ']': 'nextImage',
  '[': 'prevImage',
  '+': 'zoomIn',
  '=': 'zoomIn',
  '-': 'zoomOut',
};

export function handleKey(key: string, actions: KeyboardActions): boolean {
  const action = KEY_BINDINGS[key];
  if (!action) return false;
  actions[action]();
  return true;
}

export function bindKeyboard(target: EventTarget, actions: KeyboardActions): () => void {
  const listener = (event: Event) => {
    const ke = event as KeyboardEvent;
    if (handleKey(ke.key, actions)) ke.preventDefault();
  };
  target.addEventListener('keydown', listener);
  return () => target.removeEventListener('keydown', listener);
}
