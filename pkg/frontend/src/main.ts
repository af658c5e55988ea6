// DOM wiring for the session editor: box drag, brush/eraser edits on the
// rough sketch, stage buttons, field heatmap, layer panel and compositing.
// All sketch data flows through the server; the only client-side mutation
// is the edit tool, submitted byte-exactly as drawn.

import { ApiClient, ApiError, SessionInfo } from './api.js';
import {
  Bitmap, blank, drawStroke, maskFromPgm, sketchFromPgm, sketchToPgm,
} from './bitmap.js';
import { decodeUdfg, fieldToRgba } from './heatmap.js';
import { EditorState, normalizeBox, Tool } from './state.js';

const SCALE = 12;
const api = new ApiClient('');
const state = new EditorState();

let canvasW = 32;
let canvasH = 32;
let sketch: Bitmap = blank(canvasW, canvasH);
let mask: Bitmap | null = null;
let showMask = true;
let pendingBox: [number, number, number, number] | null = null;
let drag: { x: number; y: number } | null = null;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (text !== undefined) node.textContent = text;
  return node;
}

const root = el('div');
root.id = 'editor';
document.body.appendChild(root);

const toolbar = el('div');
toolbar.className = 'toolbar';
root.appendChild(toolbar);

const status = el('div', 'connecting...');
status.className = 'status';

const buttons: Record<string, HTMLButtonElement> = {};
for (const [key, label] of [
  ['new', 'New session (drag a box)'],
  ['rough', 'Generate rough'],
  ['edit', 'Submit edit'],
  ['mask', 'Extract mask'],
  ['detail', 'Generate detail'],
  ['layer', 'Add to layers'],
  ['compose', 'Compose'],
] as const) {
  const b = el('button', label);
  b.disabled = true;
  toolbar.appendChild(b);
  buttons[key] = b;
}

const toolPicker = el('div');
toolPicker.className = 'tools';
for (const tool of ['box', 'brush', 'eraser'] as Tool[]) {
  const b = el('button', tool);
  b.addEventListener('click', () => {
    state.tool = tool;
    refresh();
  });
  toolPicker.appendChild(b);
}
const radius = el('input') as HTMLInputElement;
radius.type = 'range';
radius.min = '0.5';
radius.max = '6';
radius.step = '0.5';
radius.value = String(state.brushRadius);
radius.addEventListener('input', () => {
  state.brushRadius = Number(radius.value);
});
const undoBtn = el('button', 'Undo');
undoBtn.addEventListener('click', () => {
  const prev = state.undo();
  if (prev) {
    sketch = prev;
    refresh();
  }
});
const maskToggle = el('button', 'Mask overlay');
maskToggle.addEventListener('click', () => {
  showMask = !showMask;
  refresh();
});
toolPicker.append(radius, undoBtn, maskToggle);
toolbar.appendChild(toolPicker);
toolbar.appendChild(status);

const sketchCanvas = el('canvas');
const fieldCanvas = el('canvas');
const compositeCanvas = el('canvas');
for (const c of [sketchCanvas, fieldCanvas, compositeCanvas]) {
  c.style.imageRendering = 'pixelated';
  c.style.border = '1px solid #888';
  c.style.marginRight = '8px';
  root.appendChild(c);
}

function setStatus(text: string) {
  status.textContent = text;
}

function refresh() {
  for (const key of Object.keys(buttons)) {
    if (key === 'new') buttons[key].disabled = state.busy;
    else if (key === 'layer') {
      buttons[key].disabled =
        state.busy || state.serverState !== 'DetailedGenerated';
    } else if (key === 'compose') {
      buttons[key].disabled = state.busy || state.layers.length === 0;
    } else buttons[key].disabled = !state.can(key);
  }
  const ctx = sketchCanvas.getContext('2d')!;
  sketchCanvas.width = canvasW * SCALE;
  sketchCanvas.height = canvasH * SCALE;
  const img = new ImageData(canvasW, canvasH);
  for (let i = 0; i < sketch.ink.length; i++) {
    const inked = sketch.ink[i] === 1;
    const inMask = showMask && mask !== null && mask.ink[i] === 1;
    img.data[4 * i] = inked ? 20 : inMask ? 255 : 250;
    img.data[4 * i + 1] = inked ? 20 : inMask ? 235 : 250;
    img.data[4 * i + 2] = inked ? 25 : inMask ? 200 : 245;
    img.data[4 * i + 3] = 255;
  }
  const off = new OffscreenCanvas(canvasW, canvasH);
  off.getContext('2d')!.putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvasW * SCALE, canvasH * SCALE);
  if (pendingBox) {
    ctx.strokeStyle = '#d33';
    ctx.lineWidth = 2;
    ctx.strokeRect(
      pendingBox[0] * SCALE,
      pendingBox[1] * SCALE,
      (pendingBox[2] - pendingBox[0]) * SCALE,
      (pendingBox[3] - pendingBox[1]) * SCALE,
    );
  }
}

function drawField(payload: Uint8Array) {
  const field = decodeUdfg(payload);
  fieldCanvas.width = field.width * SCALE;
  fieldCanvas.height = field.height * SCALE;
  const img = new ImageData(
    fieldToRgba(field) as ImageData['data'],
    field.width,
    field.height,
  );
  const off = new OffscreenCanvas(field.width, field.height);
  off.getContext('2d')!.putImageData(img, 0, 0);
  const ctx = fieldCanvas.getContext('2d')!;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, fieldCanvas.width, fieldCanvas.height);
}

function adopt(info: SessionInfo) {
  state.adoptSession(info.id, info.state, info.blank_generation);
}

async function confirmServerState() {
  // poll-after-write: the displayed state is always re-read from the server
  if (state.sessionId) {
    const info = await api.getSession(state.sessionId);
    adopt(info);
  }
}

async function step(
  label: string,
  fn: () => Promise<void>,
) {
  if (state.busy) return;
  state.busy = true;
  refresh();
  try {
    await fn();
    await confirmServerState();
    setStatus(`${label}: ok (${state.serverState})`);
  } catch (err) {
    if (err instanceof ApiError) {
      if (err.code === 'empty_ink') {
        window.alert('The edit wiped every stroke; keep at least one.');
      }
      setStatus(`${label}: ${err.message}`);
    } else {
      setStatus(`${label}: ${String(err)}`);
    }
  } finally {
    state.busy = false;
    refresh();
  }
}

function canvasPos(ev: MouseEvent): { x: number; y: number } {
  const rect = sketchCanvas.getBoundingClientRect();
  return {
    x: (ev.clientX - rect.left) / SCALE,
    y: (ev.clientY - rect.top) / SCALE,
  };
}

sketchCanvas.addEventListener('mousedown', (ev) => {
  const p = canvasPos(ev);
  drag = p;
  if (state.tool !== 'box' && state.canEdit()) {
    state.pushUndo(sketch);
    drawStroke(sketch, p.x, p.y, p.x, p.y, state.brushRadius,
      state.tool === 'brush' ? 1 : 0);
    refresh();
  }
});

sketchCanvas.addEventListener('mousemove', (ev) => {
  if (!drag) return;
  const p = canvasPos(ev);
  if (state.tool === 'box') {
    pendingBox = normalizeBox(drag.x, drag.y, p.x, p.y, canvasW, canvasH);
    refresh();
  } else if (state.canEdit()) {
    drawStroke(sketch, drag.x, drag.y, p.x, p.y, state.brushRadius,
      state.tool === 'brush' ? 1 : 0);
    drag = p;
    refresh();
  }
});

window.addEventListener('mouseup', () => {
  if (drag && state.tool === 'box' && pendingBox) {
    const box = pendingBox;
    void step('new session', async () => {
      const info = await api.createSession(box);
      adopt(info);
      sketch = blank(canvasW, canvasH);
      mask = null;
      state.layers = [];
      state.clearUndo();
    });
  }
  drag = null;
});

buttons.rough.addEventListener('click', () =>
  step('rough', async () => {
    const info = await api.rough(state.sessionId!);
    adopt(info);
    if (info.blank_generation) {
      setStatus('rough: blank decode, press again');
      return;
    }
    sketch = sketchFromPgm(await api.artifact(info.id, 'rough.pgm'));
    drawField(await api.artifact(info.id, 'rough.udfg'));
  }));

buttons.edit.addEventListener('click', () =>
  step('edit', async () => {
    const info = await api.edit(state.sessionId!, sketchToPgm(sketch));
    adopt(info);
    // what-you-see-is-what-you-send: verify the server stored our bytes
    const echoed = sketchFromPgm(await api.artifact(info.id, 'edited.pgm'));
    sketch = echoed;
    drawField(await api.artifact(info.id, 'rough.udfg'));
  }));

buttons.mask.addEventListener('click', () =>
  step('mask', async () => {
    const info = await api.mask(state.sessionId!);
    adopt(info);
    mask = maskFromPgm(await api.artifact(info.id, 'mask.pgm'));
  }));

buttons.detail.addEventListener('click', () =>
  step('detail', async () => {
    const info = await api.detail(state.sessionId!);
    adopt(info);
    if (info.blank_generation) {
      setStatus('detail: blank decode, press again');
      return;
    }
    sketch = sketchFromPgm(await api.artifact(info.id, 'detailed.pgm'));
    drawField(await api.artifact(info.id, 'detailed.udfg'));
  }));

buttons.layer.addEventListener('click', () => {
  if (state.sessionId && state.serverState === 'DetailedGenerated') {
    state.addLayer(state.sessionId);
    setStatus(`layers: ${state.layers.length}`);
    refresh();
  }
});

buttons.compose.addEventListener('click', () =>
  step('compose', async () => {
    const bytes = await api.compose(state.layers);
    const bm = sketchFromPgm(bytes);
    compositeCanvas.width = bm.width * SCALE;
    compositeCanvas.height = bm.height * SCALE;
    const img = new ImageData(bm.width, bm.height);
    for (let i = 0; i < bm.ink.length; i++) {
      const v = bm.ink[i] ? 20 : 250;
      img.data[4 * i] = v;
      img.data[4 * i + 1] = v;
      img.data[4 * i + 2] = v;
      img.data[4 * i + 3] = 255;
    }
    const off = new OffscreenCanvas(bm.width, bm.height);
    off.getContext('2d')!.putImageData(img, 0, 0);
    const ctx = compositeCanvas.getContext('2d')!;
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(off, 0, 0, compositeCanvas.width, compositeCanvas.height);
  }));

async function boot() {
  try {
    const health = await api.health();
    [canvasW, canvasH] = health.canvas;
    sketch = blank(canvasW, canvasH);
    setStatus(`ready, canvas ${canvasW}x${canvasH}; drag a box to start`);
  } catch (err) {
    setStatus(`server unreachable: ${String(err)}`);
  }
  refresh();
}

void boot();
