import { describe, expect, it } from 'vitest';

import { KEY_BINDINGS, handleKey } from '../src/keyboard.js';
import type { KeyboardActions } from '../src/keyboard.js';

function recorder(): { actions: KeyboardActions; calls: string[] } {
  const calls: string[] = [];
  const actions = Object.fromEntries(
    ['accept', 'reject', 'next', 'prev', 'nextImage', 'prevImage', 'zoomIn', 'zoomOut'].map(
      (name) => [name, () => calls.push(name)],
    ),
  ) as unknown as KeyboardActions;
  return { actions, calls };
}

describe('keyboard bindings', () => {
  it('drives the bulk-review flow with a/r/space', () => {
    const { actions, calls } = recorder();
    expect(handleKey('a', actions)).toBe(true);
    expect(handleKey('r', actions)).toBe(true);
    expect(handleKey(' ', actions)).toBe(true);
    expect(calls).toEqual(['accept', 'reject', 'next']);
  });

  it('ignores unbound keys', () => {
    const { actions, calls } = recorder();
    expect(handleKey('q', actions)).toBe(false);
    expect(calls).toEqual([]);
  });

  it('covers every documented binding', () => {
    const { actions, calls } = recorder();
    for (const key of Object.keys(KEY_BINDINGS)) handleKey(key, actions);
    expect(calls.length).toBe(Object.keys(KEY_BINDINGS).length);
  });
});
