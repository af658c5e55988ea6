// Editor-side state: active tool, bounded undo history, the layer panel
// mirror, and the box-drag normalization rules. Pure logic, no DOM.

import { Bitmap, clone } from './bitmap.js';
import { LayerSpec } from './api.js';

export type Tool = 'box' | 'brush' | 'eraser' | 'pan';

export const UNDO_LIMIT = 32;

// Stage buttons allowed in each server state; mirrors the session machine
// so the UI can disable anything the server would reject with 409.
const ALLOWED: Record<string, string[]> = {
  BoxSpecified: ['rough'],
  RoughGenerated: ['edit', 'mask'],
  RoughEdited: ['mask'],
  MaskExtracted: ['detail'],
  DetailedGenerated: ['compose'],
};

export function allowedActions(serverState: string | null): string[] {
  if (serverState === null) return ['new'];
  return ALLOWED[serverState] ?? [];
}

// Drag-to-box: normalize a reversed drag, clamp to the canvas, reject
// zero-area results (callers ignore a null).
export function normalizeBox(
  x0: number,
  y0: number,
  x1: number,
  y1: number,
  width: number,
  height: number,
): [number, number, number, number] | null {
  let ax = Math.min(x0, x1);
  let bx = Math.max(x0, x1);
  let ay = Math.min(y0, y1);
  let by = Math.max(y0, y1);
  ax = Math.max(0, Math.floor(ax));
  ay = Math.max(0, Math.floor(ay));
  bx = Math.min(width, Math.ceil(bx));
  by = Math.min(height, Math.ceil(by));
  if (bx - ax < 1 || by - ay < 1) return null;
  return [ax, ay, bx, by];
}

export class EditorState {
  tool: Tool = 'box';
  brushRadius = 1.5;
  sessionId: string | null = null;
  serverState: string | null = null;
  blankGeneration = false;
  layers: LayerSpec[] = [];
  busy = false;
  private undoStack: Bitmap[] = [];

  pushUndo(bm: Bitmap) {
    this.undoStack.push(clone(bm));
    while (this.undoStack.length > UNDO_LIMIT) this.undoStack.shift();
  }

  undo(): Bitmap | null {
    const prev = this.undoStack.pop();
    return prev ?? null;
  }

  undoDepth(): number {
    return this.undoStack.length;
  }

  clearUndo() {
    this.undoStack = [];
  }

  canEdit(): boolean {
    return this.serverState === 'RoughGenerated';
  }

  can(action: string): boolean {
    return !this.busy && allowedActions(this.serverState).includes(action);
  }

  adoptSession(id: string, state: string, blank: boolean) {
    this.sessionId = id;
    this.serverState = state;
    this.blankGeneration = blank;
  }

  addLayer(sessionId: string) {
    this.layers.push({ session_id: sessionId, offset: [0, 0] });
  }

  moveLayer(index: number, dx: number, dy: number) {
    const layer = this.layers[index];
    if (!layer) return;
    layer.offset = [layer.offset[0] + dx, layer.offset[1] + dy];
  }

  reorderLayer(from: number, to: number) {
    if (from < 0 || from >= this.layers.length) return;
    if (to < 0 || to >= this.layers.length) return;
    const [moved] = this.layers.splice(from, 1);
    this.layers.splice(to, 0, moved);
  }
}
