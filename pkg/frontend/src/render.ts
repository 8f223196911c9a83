/** HTML renderers: pure functions from view state to markup strings, so the
 * contract tests can assert on output without a DOM. */

import type { QueueViewState } from "./state.js";
import type { ItemDetail, ItemSummary } from "./types.js";

const esc = (value: unknown): string =>
  String(value).replace(/[&<>"']/g, (c) => `&#${c.charCodeAt(0)};`);

export function renderBanner(state: QueueViewState): string {
  const banner = state.banner;
  switch (banner.kind) {
    case "none":
      return "";
    case "stale":
      return `<div class="banner stale">Server moved to version ${banner.serverVersion} (view is at ${banner.viewVersion}). <button data-action="refresh">Refresh</button></div>`;
    case "conflict":
      return `<div class="banner conflict">Conflict: ${esc(banner.message)} <button data-action="refresh">Refresh and retry</button></div>`;
    case "error":
      return `<div class="banner error">${esc(banner.message)}${banner.retriable ? ' <button data-action="retry">Retry</button>' : ""}</div>`;
  }
}

export function renderQueue(state: QueueViewState): string {
  const page = state.page;
  if (!page) return `<p class="loading">Loading queue…</p>`;
  if (page.total === 0) return `<p class="empty">No open anomalies.</p>`;
  const rows = page.items.map((item) => renderQueueRow(item, page.threshold)).join("");
  const pages = Math.max(1, Math.ceil(page.total / page.page_size));
  return (
    `<table class="queue"><thead><tr><th>record</th><th>score (bits)</th><th>status</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>` +
    `<nav class="pager">` +
    `<button data-action="prev" ${page.page <= 1 ? "disabled" : ""}>prev</button>` +
    ` page ${page.page} / ${pages} (${page.total} items) ` +
    `<button data-action="next" ${page.page >= pages ? "disabled" : ""}>next</button>` +
    `</nav>`
  );
}

function renderQueueRow(item: ItemSummary, threshold: number): string {
  const flaggedClass = item.score > threshold ? "above" : "below";
  return (
    `<tr data-item="${esc(item.id)}" class="${item.status}">` +
    `<td><a href="#" data-action="select" data-item="${esc(item.id)}">node ${item.node}</a></td>` +
    `<td class="score ${flaggedClass}">${item.score.toFixed(3)}</td>` +
    `<td>${item.status}</td></tr>`
  );
}

export function renderDetail(state: QueueViewState): string {
  const item = state.selected;
  if (!item) return `<p class="empty">Select a record to review.</p>`;
  const threshold = state.page?.threshold ?? Number.POSITIVE_INFINITY;
  const clauses = item.violated_clauses
    .map((c) => `<li><code>${esc(c.text)}</code> <span class="bits">${c.bits.toFixed(2)} bits</span></li>`)
    .join("");
  const repairs = item.repairs
    .map(
      (r, index) =>
        `<li>${esc(r.description)} → ${r.predicted_score_after.toFixed(3)} bits ` +
        `(cost ${r.edit_cost.toFixed(2)}) ` +
        `<button data-action="repair" data-index="${index}" ${state.resolving ? "disabled" : ""}>apply…</button></li>`,
    )
    .join("");
  const neighbors = item.neighborhood
    .map((n) => `<li>${esc(n.relation)} → ${esc(n.kind)} #${n.node} ${esc(JSON.stringify(n.attrs))}</li>`)
    .join("");
  const confirm = state.pendingConfirm
    ? `<div class="confirm">Apply repair #${state.pendingConfirm.repairIndex + 1} to ${esc(state.pendingConfirm.itemId)}? ` +
      `<button data-action="confirm" ${state.resolving ? "disabled" : ""}>Confirm</button> ` +
      `<button data-action="cancel">Cancel</button></div>`
    : "";
  const badge =
    item.score > threshold
      ? `<span class="badge flagged">${item.score.toFixed(3)} bits &gt; τ</span>`
      : `<span class="badge ok">${item.score.toFixed(3)} bits ≤ τ</span>`;
  return (
    `<article class="detail" data-item="${esc(item.id)}">` +
    `<h2>node ${item.node} <small>(${esc(item.node_kind)})</small> ${badge}</h2>` +
    `<p class="attrs">${esc(JSON.stringify(item.node_attrs))}</p>` +
    `<h3>violated clauses</h3><ul class="clauses">${clauses || "<li>none</li>"}</ul>` +
    `<h3>proposed repairs</h3><ol class="repairs">${repairs || "<li>none found</li>"}</ol>` +
    `${confirm}` +
    `<p class="actions">` +
    `<button data-action="mark-valid" ${state.resolving ? "disabled" : ""}>mark valid</button> ` +
    `<button data-action="reject" ${state.resolving ? "disabled" : ""}>reject</button></p>` +
    `<h3>1-hop context</h3><ul class="neighborhood">${neighbors || "<li>isolated</li>"}</ul>` +
    `</article>`
  );
}

export function renderResolutionNote(state: QueueViewState): string {
  const last = state.lastResolution;
  if (!last) return "";
  if (last.newScore === undefined) {
    return `<p class="note">Resolved ${esc(last.itemId)}.</p>`;
  }
  const verdict = last.belowThreshold ? "below threshold" : "still above threshold";
  return `<p class="note">Resolved ${esc(last.itemId)}: new score ${last.newScore.toFixed(3)} bits (${verdict}).</p>`;
}

export function renderApp(state: QueueViewState): string {
  return (
    renderBanner(state) +
    `<main class="layout"><section class="left">${renderQueue(state)}</section>` +
    `<section class="right">${renderResolutionNote(state)}${renderDetail(state)}</section></main>`
  );
}
