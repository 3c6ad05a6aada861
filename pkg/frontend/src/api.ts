/** Typed client for the label service HTTP API. All label state lives on the
 * server; this module never caches labels. */

export interface IndividualSummary {
  id: string;
  song_count: number;
  cluster_count: number;
  noise_count: number;
}

export interface ClusterSummary {
  label: number;
  size: number;
  exemplar_song_ids: string[];
}

export interface ClusterItem {
  song_id: string;
  unit_count: number;
  label_source: string | null;
}

export interface ItemsPage {
  items: ClusterItem[];
  page: number;
  page_size: number;
  total: number;
}

export type EditKind = "relabel" | "merge_clusters" | "mark_noise" | "split_assign";

export interface EditRequest {
  kind: EditKind;
  targets: (string | [string, number])[];
  new_label: number | null;
  editor: string;
}

export interface EditResponse {
  applied: boolean;
  journal_index: number;
}

export interface ApiErrorBody {
  error: { code: string; message: string };
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<never> {
  let code = "unknown";
  let message = `HTTP ${response.status}`;
  try {
    const body = (await response.json()) as ApiErrorBody;
    code = body.error.code;
    message = body.error.message;
  } catch {
    // non-JSON error body: keep the defaults
  }
  throw new ApiError(response.status, code, message);
}

export class LabelApi {
  constructor(private readonly baseUrl: string = "") {}

  private async get<T>(path: string): Promise<T> {
    const response = await fetch(this.baseUrl + path);
    if (!response.ok) await parseError(response);
    return (await response.json()) as T;
  }

  private async post<T>(path: string, payload: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!response.ok) await parseError(response);
    return (await response.json()) as T;
  }

  health(): Promise<{ version: string }> {
    return this.get("/api/health");
  }

  individuals(): Promise<IndividualSummary[]> {
    return this.get("/api/individuals");
  }

  clusters(individual: string): Promise<ClusterSummary[]> {
    return this.get(`/api/individuals/${encodeURIComponent(individual)}/clusters`);
  }

  items(individual: string, label: number, page = 1, pageSize = 20): Promise<ItemsPage> {
    const ind = encodeURIComponent(individual);
    return this.get(
      `/api/clusters/${ind}/${label}/items?page=${page}&page_size=${pageSize}`,
    );
  }

  spectrogramUrl(songId: string): string {
    return `${this.baseUrl}/api/spectrogram/${encodeURIComponent(songId)}.png`;
  }

  submitEdit(edit: EditRequest): Promise<EditResponse> {
    return this.post("/api/edits", edit);
  }

  exportSnapshot(): Promise<{ snapshot_version: number }> {
    return this.post("/api/export", {});
  }
}
