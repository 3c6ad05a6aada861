/** View-state controller: which cluster is open, what is selected, and the
 * edit flow. Labels shown anywhere always come from the last server fetch;
 * nothing here survives a reload, by design. */

import {
  ApiError,
  ClusterItem,
  ClusterSummary,
  EditKind,
  IndividualSummary,
  ItemsPage,
  LabelApi,
} from "./api.js";

export interface ViewState {
  individuals: IndividualSummary[];
  currentIndividual: string | null;
  clusters: ClusterSummary[];
  currentLabel: number | null;
  page: ItemsPage | null;
  selection: Set<string>;
  lastAnchor: string | null;
  error: string | null;
  busy: boolean;
}

export function emptyState(): ViewState {
  return {
    individuals: [],
    currentIndividual: null,
    clusters: [],
    currentLabel: null,
    page: null,
    selection: new Set(),
    lastAnchor: null,
    error: null,
    busy: false,
  };
}

export class AppController {
  readonly state: ViewState = emptyState();
  private listeners: (() => void)[] = [];

  constructor(
    private readonly api: LabelApi,
    private readonly editor: string = "webui",
  ) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  private async guard<T>(work: () => Promise<T>): Promise<T | null> {
    this.state.busy = true;
    this.state.error = null;
    this.notify();
    try {
      return await work();
    } catch (err) {
      this.state.error =
        err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
      return null;
    } finally {
      this.state.busy = false;
      this.notify();
    }
  }

  async refreshIndividuals(): Promise<void> {
    await this.guard(async () => {
      this.state.individuals = await this.api.individuals();
    });
  }

  async openIndividual(id: string): Promise<void> {
    await this.guard(async () => {
      this.state.clusters = await this.api.clusters(id);
      this.state.currentIndividual = id;
      this.state.currentLabel = null;
      this.state.page = null;
      this.clearSelection();
    });
  }

  async openCluster(label: number, page = 1, pageSize = 20): Promise<void> {
    const individual = this.state.currentIndividual;
    if (individual === null) return;
    await this.guard(async () => {
      this.state.page = await this.api.items(individual, label, page, pageSize);
      this.state.currentLabel = label;
      this.clearSelection();
    });
  }

  /** Selection is only ever drawn from the items on the open page. */
  loadedIds(): string[] {
    return this.state.page ? this.state.page.items.map((i) => i.song_id) : [];
  }

  toggleSelect(songId: string): void {
    if (!this.loadedIds().includes(songId)) return;
    if (this.state.selection.has(songId)) {
      this.state.selection.delete(songId);
    } else {
      this.state.selection.add(songId);
      this.state.lastAnchor = songId;
    }
    this.notify();
  }

  /** Shift-click style range selection within the loaded page order. */
  selectRange(toSongId: string): void {
    const ids = this.loadedIds();
    const from = this.state.lastAnchor ?? ids[0];
    const a = ids.indexOf(from);
    const b = ids.indexOf(toSongId);
    if (a < 0 || b < 0) return;
    for (let i = Math.min(a, b); i <= Math.max(a, b); i++) {
      this.state.selection.add(ids[i]);
    }
    this.notify();
  }

  selectAllLoaded(): void {
    for (const id of this.loadedIds()) this.state.selection.add(id);
    this.notify();
  }

  clearSelection(): void {
    this.state.selection.clear();
    this.state.lastAnchor = null;
  }

  private async afterEdit(): Promise<void> {
    // the server is the source of truth: refetch every affected view
    const { currentIndividual, currentLabel, page } = this.state;
    this.state.individuals = await this.api.individuals();
    if (currentIndividual !== null) {
      this.state.clusters = await this.api.clusters(currentIndividual);
      if (currentLabel !== null) {
        this.state.page = await this.api.items(
          currentIndividual,
          currentLabel,
          page?.page ?? 1,
          page?.page_size ?? 20,
        );
      }
    }
  }

  /** Relabel / mark-noise / split-assign over the current selection. */
  async submitSelectionEdit(kind: EditKind, newLabel: number | null): Promise<boolean> {
    const targets = [...this.state.selection];
    if (targets.length === 0) {
      this.state.error = "nothing selected";
      this.notify();
      return false;
    }
    const ok = await this.guard(async () => {
      await this.api.submitEdit({
        kind,
        targets,
        new_label: kind === "mark_noise" ? null : newLabel,
        editor: this.editor,
      });
      this.clearSelection(); // draft cleared only after a successful POST
      await this.afterEdit();
      return true;
    });
    return ok === true; // on failure the selection is preserved
  }

  /** Merge one cluster of the open individual into another. */
  async mergeClusters(sourceLabel: number, destinationLabel: number): Promise<boolean> {
    const individual = this.state.currentIndividual;
    if (individual === null) return false;
    const ok = await this.guard(async () => {
      await this.api.submitEdit({
        kind: "merge_clusters",
        targets: [[individual, sourceLabel]],
        new_label: destinationLabel,
        editor: this.editor,
      });
      await this.afterEdit();
      return true;
    });
    return ok === true;
  }

  async exportSnapshot(): Promise<number | null> {
    const out = await this.guard(() => this.api.exportSnapshot());
    return out ? out.snapshot_version : null;
  }

  itemsOnPage(): ClusterItem[] {
    return this.state.page ? this.state.page.items : [];
  }

  pageCount(): number {
    const page = this.state.page;
    if (!page || page.page_size === 0) return 0;
    return Math.ceil(page.total / page.page_size);
  }
}
