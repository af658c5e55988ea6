// Typed client for the session HTTP API. Every method returns the parsed
// server payload; non-2xx responses throw ApiError carrying the server's
// machine-readable code.

export interface SessionInfo {
  id: string;
  state: string;
  canvas: [number, number];
  bbox: [number, number, number, number];
  class_tag: number;
  blank_generation: boolean;
  images: Record<string, string>;
}

export interface LayerSpec {
  session_id: string;
  offset: [number, number];
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    detail: string,
    public state?: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.base + path, init);
    const body = await res.json();
    if (!res.ok) {
      throw new ApiError(res.status, body.error ?? 'error',
        body.detail ?? '', body.state);
    }
    return body as T;
  }

  private async bytes(path: string, init?: RequestInit): Promise<Uint8Array> {
    const res = await this.fetchFn(this.base + path, init);
    if (!res.ok) {
      const body = await res.json();
      throw new ApiError(res.status, body.error ?? 'error',
        body.detail ?? '', body.state);
    }
    return new Uint8Array(await res.arrayBuffer());
  }

  health(): Promise<{ ok: boolean; canvas: [number, number] }> {
    return this.json('/healthz');
  }

  createSession(
    bbox: [number, number, number, number],
    classTag = 0,
  ): Promise<SessionInfo> {
    return this.json('/sessions', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ bbox, class_tag: classTag }),
    });
  }

  getSession(id: string): Promise<SessionInfo> {
    return this.json(`/sessions/${id}`);
  }

  artifact(id: string, name: string): Promise<Uint8Array> {
    return this.bytes(`/sessions/${id}/artifact/${name}`);
  }

  rough(id: string): Promise<SessionInfo> {
    return this.json(`/sessions/${id}/rough`, { method: 'POST' });
  }

  edit(id: string, p5: Uint8Array): Promise<SessionInfo> {
    // copy into a fresh buffer so the body is a plain ArrayBuffer
    const payload = new Uint8Array(p5.length);
    payload.set(p5);
    return this.json(`/sessions/${id}/edit`, {
      method: 'PUT',
      headers: { 'content-type': 'application/octet-stream' },
      body: payload.buffer,
    });
  }

  mask(id: string): Promise<SessionInfo> {
    return this.json(`/sessions/${id}/mask`, { method: 'POST' });
  }

  detail(id: string): Promise<SessionInfo> {
    return this.json(`/sessions/${id}/detail`, { method: 'POST' });
  }

  compose(layers: LayerSpec[]): Promise<Uint8Array> {
    return this.bytes('/compose', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ layers }),
    });
  }
}
