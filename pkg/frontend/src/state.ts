/** View-state controller for the triage queue.
 *
 * Owns the filter, the current page, the selected item, and the resolution
 * flow.  Mutation requests are serialized per item (a submit while one is in
 * flight is ignored), apply_repair needs an explicit confirmation step, and
 * a 409 flips the view into a conflict state whose only exit is a refresh.
 */

import { ApiError, ConflictError, ReviewApi } from "./api.js";
import type { ItemDetail, QueueFilter, QueuePage, Resolution } from "./types.js";

export type Banner =
  | { kind: "none" }
  | { kind: "stale"; serverVersion: number; viewVersion: number }
  | { kind: "conflict"; message: string }
  | { kind: "error"; message: string; retriable: boolean };

export interface QueueViewState {
  filter: QueueFilter;
  page: QueuePage | null;
  pageNumber: number;
  pageSize: number;
  selected: ItemDetail | null;
  pendingConfirm: { itemId: string; repairIndex: number } | null;
  resolving: boolean;
  lastResolution: { itemId: string; newScore?: number; belowThreshold?: boolean } | null;
  banner: Banner;
}

export class QueueController {
  state: QueueViewState = {
    filter: { status: "open" },
    page: null,
    pageNumber: 1,
    pageSize: 10,
    selected: null,
    pendingConfirm: null,
    resolving: false,
    lastResolution: null,
    banner: { kind: "none" },
  };

  constructor(
    private readonly api: ReviewApi,
    public actor: string = "reviewer",
  ) {}

  /** Version the current page was rendered from, for staleness checks. */
  private viewVersion: number | null = null;

  async loadQueue(pageNumber = this.state.pageNumber): Promise<void> {
    try {
      const page = await this.api.fetchQueue(this.state.filter, pageNumber, this.state.pageSize);
      this.state.page = page;
      this.state.pageNumber = pageNumber;
      this.viewVersion = page.graph_version;
      if (this.state.banner.kind === "stale" || this.state.banner.kind === "error") {
        this.state.banner = { kind: "none" };
      }
    } catch (err) {
      this.fail(err);
    }
  }

  pageCount(): number {
    const page = this.state.page;
    if (!page) return 0;
    return Math.max(1, Math.ceil(page.total / page.page_size));
  }

  async nextPage(): Promise<void> {
    if (this.state.pageNumber < this.pageCount()) await this.loadQueue(this.state.pageNumber + 1);
  }

  async previousPage(): Promise<void> {
    if (this.state.pageNumber > 1) await this.loadQueue(this.state.pageNumber - 1);
  }

  async select(itemId: string): Promise<void> {
    try {
      const detail = await this.api.fetchItem(itemId);
      this.state.selected = detail;
      this.state.pendingConfirm = null;
      this.checkStaleness(detail.graph_version);
    } catch (err) {
      this.fail(err);
    }
  }

  /** The server advanced past the version this view was rendered from. */
  private checkStaleness(serverVersion: number): void {
    if (this.viewVersion !== null && serverVersion > this.viewVersion) {
      this.state.banner = { kind: "stale", serverVersion, viewVersion: this.viewVersion };
    }
  }

  /** Stage an apply_repair; nothing is sent until confirmRepair(). */
  requestRepair(repairIndex: number): void {
    const item = this.state.selected;
    if (!item || item.status !== "open") return;
    this.state.pendingConfirm = { itemId: item.id, repairIndex };
  }

  cancelRepair(): void {
    this.state.pendingConfirm = null;
  }

  async confirmRepair(): Promise<void> {
    const pending = this.state.pendingConfirm;
    if (!pending) return;
    await this.submit({ action: "apply_repair", actor: this.actor, repair_index: pending.repairIndex });
  }

  async markValid(): Promise<void> {
    await this.submit({ action: "mark_valid", actor: this.actor });
  }

  async reject(): Promise<void> {
    await this.submit({ action: "reject", actor: this.actor });
  }

  private async submit(resolution: Resolution): Promise<void> {
    const item = this.state.selected;
    if (!item) return;
    if (this.state.resolving) return; // one request per item at a time
    this.state.resolving = true;
    try {
      const result = await this.api.submitResolution(item.id, resolution);
      this.state.lastResolution = {
        itemId: item.id,
        newScore: result.new_score,
        belowThreshold: result.below_threshold,
      };
      this.state.pendingConfirm = null;
      this.state.selected = null;
      await this.loadQueue();
    } catch (err) {
      if (err instanceof ConflictError) {
        this.state.banner = { kind: "conflict", message: err.message };
      } else {
        this.fail(err);
      }
    } finally {
      this.state.resolving = false;
    }
  }

  /** The conflict dialog's refresh: re-fetch queue and selection. */
  async refreshAfterConflict(): Promise<void> {
    const selectedId = this.state.selected?.id ?? null;
    this.state.banner = { kind: "none" };
    this.state.pendingConfirm = null;
    await this.loadQueue();
    if (selectedId && this.state.page?.items.some((i) => i.id === selectedId)) {
      await this.select(selectedId);
    } else {
      this.state.selected = null;
    }
  }

  private fail(err: unknown): void {
    if (err instanceof ApiError) {
      this.state.banner = { kind: "error", message: err.message, retriable: err.retriable };
    } else {
      this.state.banner = { kind: "error", message: String(err), retriable: false };
    }
  }
}
