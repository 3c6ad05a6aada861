/** End-to-end review-loop test against a real label service.
 *
 * A fixture dataset is built with the pipeline CLI, the service is spawned,
 * and the app's controller drives the same code paths the browser uses. All
 * assertions read back through the public HTTP API: the UI never owns label
 * state, so server truth is the only truth.
 */

import assert from "node:assert/strict";
import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { after, before, test } from "node:test";

import { LabelApi } from "../src/api.js";
import { AppController } from "../src/state.js";

const PYTHON = process.env.VOCALKIT_PYTHON ?? "python3";

let projectDir: string;
let service: ChildProcess;
let baseUrl: string;

function cli(...args: string[]): void {
  execFileSync(PYTHON, ["-m", "vocalkit.cli", ...args], { stdio: "pipe" });
}

before(async () => {
  projectDir = mkdtempSync(join(tmpdir(), "vocalkit-webui-"));
  cli("init", "--project", projectDir, "--with-sample");
  cli("ingest", "--project", projectDir);
  cli("segment", "--project", projectDir, "--threads", "2");
  cli("embed", "--project", projectDir);
  cli("cluster", "--project", projectDir);

  service = spawn(PYTHON, ["-m", "vocalkit.cli", "app", "--project", projectDir, "--port", "0"]);
  baseUrl = await new Promise<string>((resolve, reject) => {
    let buffer = "";
    let errors = "";
    const timer = setTimeout(
      () => reject(new Error(`service did not start: ${buffer} ${errors}`)),
      30000,
    );
    service.stderr!.on("data", (chunk: Buffer) => (errors += chunk.toString()));
    service.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const match = buffer.match(/http:\/\/127\.0\.0\.1:(\d+)\//);
      if (match) {
        clearTimeout(timer);
        resolve(`http://127.0.0.1:${match[1]}`);
      }
    });
    service.on("exit", (code) => reject(new Error(`service exited early (${code}): ${buffer} ${errors}`)));
  });
});

after(() => {
  service?.kill();
  rmSync(projectDir, { recursive: true, force: true });
});

test("health and individuals load", async () => {
  const api = new LabelApi(baseUrl);
  const health = await api.health();
  assert.match(health.version, /^\d+\.\d+\.\d+$/);
  const controller = new AppController(api, "e2e");
  await controller.refreshIndividuals();
  assert.equal(controller.state.error, null);
  assert.equal(controller.state.individuals.length, 5);
  assert.equal(controller.state.individuals[0].song_count, 4);
});

test("cluster grid displays items with spectrogram urls and pagination", async () => {
  const api = new LabelApi(baseUrl);
  const controller = new AppController(api, "e2e");
  await controller.refreshIndividuals();
  await controller.openIndividual("GT01");
  assert.ok(controller.state.clusters.length >= 2);

  await controller.openCluster(0, 1, 1); // page_size 1 over 2 items -> 2 pages
  assert.equal(controller.state.page!.total, 2);
  assert.equal(controller.pageCount(), 2);
  const first = controller.itemsOnPage()[0];

  await controller.openCluster(0, 2, 1);
  const second = controller.itemsOnPage()[0];
  assert.notEqual(first.song_id, second.song_id);

  const image = await fetch(api.spectrogramUrl(first.song_id));
  assert.equal(image.status, 200);
  assert.equal(image.headers.get("content-type"), "image/png");
  const bytes = new Uint8Array(await image.arrayBuffer());
  assert.deepEqual([...bytes.slice(0, 4)], [0x89, 0x50, 0x4e, 0x47]);
});

test("selection stays within loaded items", async () => {
  const api = new LabelApi(baseUrl);
  const controller = new AppController(api, "e2e");
  await controller.refreshIndividuals();
  await controller.openIndividual("GT02");
  await controller.openCluster(0);
  controller.toggleSelect("not-a-loaded-song");
  assert.equal(controller.state.selection.size, 0);
  controller.selectAllLoaded();
  const loaded = new Set(controller.loadedIds());
  for (const id of controller.state.selection) assert.ok(loaded.has(id));
});

test("bulk relabel of 3 items round-trips through the server", async () => {
  const api = new LabelApi(baseUrl);
  const controller = new AppController(api, "e2e");
  await controller.refreshIndividuals();
  await controller.openIndividual("GT03");

  // widen cluster 0 to 4 songs so one page offers >= 3 items to select
  await controller.openCluster(1, 1, 50);
  controller.selectAllLoaded();
  assert.equal(await controller.submitSelectionEdit("relabel", 0), true);

  await controller.openCluster(0, 1, 50);
  assert.equal(controller.state.page!.total, 4);
  controller.selectAllLoaded();
  controller.toggleSelect(controller.loadedIds()[3]); // deselect one -> 3 left
  const three = [...controller.state.selection];
  assert.equal(three.length, 3);

  const ok = await controller.submitSelectionEdit("relabel", 7);
  assert.equal(ok, true);
  assert.equal(controller.state.selection.size, 0); // draft cleared on success

  // server truth: exactly those 3 songs now sit in cluster 7, marked human
  const page7 = await api.items("GT03", 7, 1, 50);
  assert.deepEqual(page7.items.map((i) => i.song_id).sort(), [...three].sort());
  for (const item of page7.items) assert.equal(item.label_source, "human");
});

test("merge two clusters shrinks the cluster list by one", async () => {
  const api = new LabelApi(baseUrl);
  const controller = new AppController(api, "e2e");
  await controller.refreshIndividuals();
  await controller.openIndividual("GT04");
  const labels = controller.state.clusters.filter((c) => c.label >= 0).map((c) => c.label);
  assert.ok(labels.length >= 2);
  const [dest, source] = labels;
  const sizeBefore = controller.state.clusters.find((c) => c.label === dest)!.size;
  const sourceSize = controller.state.clusters.find((c) => c.label === source)!.size;

  const ok = await controller.mergeClusters(source, dest);
  assert.equal(ok, true);

  const after = await api.clusters("GT04");
  const afterLabels = after.filter((c) => c.label >= 0).map((c) => c.label);
  assert.equal(afterLabels.length, labels.length - 1);
  assert.equal(after.find((c) => c.label === dest)!.size, sizeBefore + sourceSize);
});

test("server rejection preserves the selection", async () => {
  const api = new LabelApi(baseUrl);
  const controller = new AppController(api, "e2e");
  await controller.refreshIndividuals();
  await controller.openIndividual("GT05");
  await controller.openCluster(0, 1, 50);
  controller.selectAllLoaded();
  const selected = controller.state.selection.size;
  assert.ok(selected > 0);

  const ok = await controller.submitSelectionEdit("relabel", -2 as number); // invalid label
  assert.equal(ok, false);
  assert.ok(controller.state.error, "an error must be surfaced");
  assert.equal(controller.state.selection.size, selected); // selection intact
});

test("hard refresh shows only server-truth labels", async () => {
  // first session relabels one song
  const api = new LabelApi(baseUrl);
  const session1 = new AppController(api, "e2e");
  await session1.refreshIndividuals();
  await session1.openIndividual("GT01");
  await session1.openCluster(1, 1, 50);
  const victim = session1.loadedIds()[0];
  session1.toggleSelect(victim);
  assert.equal(await session1.submitSelectionEdit("relabel", 42), true);

  // hard refresh: a brand new controller with no carried-over state
  const session2 = new AppController(new LabelApi(baseUrl), "e2e");
  await session2.refreshIndividuals();
  await session2.openIndividual("GT01");
  const labels = session2.state.clusters.map((c) => c.label);
  assert.ok(labels.includes(42), "new session must see the server-side label 42");
  await session2.openCluster(42, 1, 50);
  assert.ok(session2.loadedIds().includes(victim));

  // and the API agrees (the view layer added nothing of its own)
  const page = await new LabelApi(baseUrl).items("GT01", 42, 1, 50);
  assert.ok(page.items.map((i) => i.song_id).includes(victim));
});
