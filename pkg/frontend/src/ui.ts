/** DOM rendering for the review app: individuals list, cluster rail, and the
 * spectrogram grid with bulk selection and edit actions. */

import { LabelApi } from "./api.js";
import { AppController } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class AppView {
  private root: HTMLElement;

  constructor(
    private readonly api: LabelApi,
    private readonly controller: AppController,
    mount: HTMLElement,
  ) {
    this.root = mount;
    controller.onChange(() => this.render());
    document.addEventListener("keydown", (ev) => this.onKey(ev));
  }

  private onKey(ev: KeyboardEvent): void {
    if (ev.target instanceof HTMLInputElement) return;
    if (ev.key === "a" && (ev.ctrlKey || ev.metaKey)) {
      ev.preventDefault();
      this.controller.selectAllLoaded();
    } else if (ev.key === "Escape") {
      this.controller.clearSelection();
      this.render();
    } else if (ev.key === "n") {
      void this.controller.submitSelectionEdit("mark_noise", null);
    }
  }

  render(): void {
    const s = this.controller.state;
    this.root.replaceChildren();

    const banner = el("div", "banner");
    if (s.error) {
      banner.classList.add("error");
      banner.textContent = `Error: ${s.error}`;
      const retry = el("button", "", "retry");
      retry.onclick = () => void this.controller.refreshIndividuals();
      banner.append(" ", retry);
    } else if (s.busy) {
      banner.textContent = "working...";
    }
    this.root.append(banner);

    const layout = el("div", "layout");
    layout.append(this.renderIndividuals(), this.renderClusters(), this.renderGrid());
    this.root.append(layout);
  }

  private renderIndividuals(): HTMLElement {
    const s = this.controller.state;
    const pane = el("nav", "individuals");
    pane.append(el("h2", "", "individuals"));
    for (const ind of s.individuals) {
      const row = el("button", "individual-row");
      row.textContent = `${ind.id} (${ind.song_count} songs, ${ind.cluster_count} clusters, ${ind.noise_count} noise)`;
      if (ind.id === s.currentIndividual) row.classList.add("active");
      row.onclick = () => void this.controller.openIndividual(ind.id);
      pane.append(row);
    }
    const exportBtn = el("button", "export", "export snapshot");
    exportBtn.onclick = async () => {
      const version = await this.controller.exportSnapshot();
      if (version !== null) window.alert(`snapshot version ${version}`);
    };
    pane.append(exportBtn);
    return pane;
  }

  private renderClusters(): HTMLElement {
    const s = this.controller.state;
    const pane = el("aside", "clusters");
    pane.append(el("h2", "", s.currentIndividual ?? "no individual"));
    for (const cluster of s.clusters) {
      const row = el("div", "cluster-row");
      const name = cluster.label === -1 ? "noise" : `cluster ${cluster.label}`;
      const open = el("button", "", `${name} (${cluster.size})`);
      if (cluster.label === s.currentLabel) open.classList.add("active");
      open.onclick = () => void this.controller.openCluster(cluster.label);
      row.append(open);
      if (cluster.label !== -1) {
        const merge = el("button", "merge", "merge into...");
        merge.onclick = () => {
          const dest = window.prompt(`merge ${name} into label:`);
          if (dest !== null && dest.trim() !== "") {
            void this.controller.mergeClusters(cluster.label, Number(dest));
          }
        };
        row.append(merge);
      }
      pane.append(row);
    }
    return pane;
  }

  private renderGrid(): HTMLElement {
    const s = this.controller.state;
    const pane = el("main", "grid-pane");
    if (!s.page) {
      pane.append(el("p", "hint", "pick a cluster to review its songs"));
      return pane;
    }
    if (s.page.total === 0) {
      pane.append(el("p", "hint", "this cluster is empty"));
      return pane;
    }

    pane.append(this.renderActions());

    const grid = el("div", "grid");
    for (const item of s.page.items) {
      const card = el("figure", "card");
      if (s.selection.has(item.song_id)) card.classList.add("selected");
      const img = el("img");
      img.src = this.api.spectrogramUrl(item.song_id);
      img.alt = item.song_id;
      img.loading = "lazy";
      const caption = el("figcaption");
      caption.append(
        el("span", "song-id", item.song_id),
        el("span", `badge ${item.label_source ?? "none"}`, item.label_source ?? "unlabelled"),
        el("span", "units", `${item.unit_count} units`),
      );
      card.append(img, caption);
      card.onclick = (ev) => {
        if (ev.shiftKey) this.controller.selectRange(item.song_id);
        else this.controller.toggleSelect(item.song_id);
      };
      grid.append(card);
    }
    pane.append(grid, this.renderPager());
    return pane;
  }

  private renderActions(): HTMLElement {
    const s = this.controller.state;
    const bar = el("div", "actions");
    bar.append(el("span", "count", `${s.selection.size} selected`));

    const labelInput = el("input");
    labelInput.type = "number";
    labelInput.placeholder = "label";
    const relabel = el("button", "", "relabel");
    relabel.onclick = () => {
      if (labelInput.value !== "") {
        void this.controller.submitSelectionEdit("relabel", Number(labelInput.value));
      }
    };
    const noise = el("button", "", "mark noise (n)");
    noise.onclick = () => void this.controller.submitSelectionEdit("mark_noise", null);
    const all = el("button", "", "select page (ctrl-a)");
    all.onclick = () => this.controller.selectAllLoaded();
    bar.append(labelInput, relabel, noise, all);
    return bar;
  }

  private renderPager(): HTMLElement {
    const s = this.controller.state;
    const pager = el("div", "pager");
    const pages = this.controller.pageCount();
    const current = s.page?.page ?? 1;
    pager.append(el("span", "", `page ${current} / ${pages}`));
    const prev = el("button", "", "prev");
    prev.disabled = current <= 1;
    prev.onclick = () => void this.controller.openCluster(s.currentLabel ?? 0, current - 1);
    const next = el("button", "", "next");
    next.disabled = current >= pages;
    next.onclick = () => void this.controller.openCluster(s.currentLabel ?? 0, current + 1);
    pager.append(prev, next);
    return pager;
  }
}
