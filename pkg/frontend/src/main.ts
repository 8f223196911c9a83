/** Browser bootstrap: wires the controller to the DOM and polls the queue.
 * The service base URL and poll interval come from the host page:
 *
 *   <script>window.MEDGRAPH = { baseUrl: "http://localhost:8765", pollMs: 15000 };</script>
 */

import { ReviewApi } from "./api.js";
import { renderApp } from "./render.js";
import { QueueController } from "./state.js";

interface RuntimeConfig {
  baseUrl?: string;
  pollMs?: number;
  actor?: string;
}

declare global {
  interface Window {
    MEDGRAPH?: RuntimeConfig;
  }
}

function bootstrap(): void {
  const config = window.MEDGRAPH ?? {};
  const api = new ReviewApi(config.baseUrl ?? "");
  const controller = new QueueController(api, config.actor ?? "reviewer");
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");

  const redraw = (): void => {
    root.innerHTML = renderApp(controller.state);
  };

  root.addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest("[data-action]");
    if (!target) return;
    event.preventDefault();
    const action = target.getAttribute("data-action");
    const run = async (): Promise<void> => {
      switch (action) {
        case "select":
          await controller.select(target.getAttribute("data-item") ?? "");
          break;
        case "prev":
          await controller.previousPage();
          break;
        case "next":
          await controller.nextPage();
          break;
        case "repair":
          controller.requestRepair(Number(target.getAttribute("data-index")));
          break;
        case "confirm":
          await controller.confirmRepair();
          break;
        case "cancel":
          controller.cancelRepair();
          break;
        case "mark-valid":
          await controller.markValid();
          break;
        case "reject":
          await controller.reject();
          break;
        case "refresh":
        case "retry":
          await controller.refreshAfterConflict();
          break;
      }
      redraw();
    };
    void run();
  });

  void controller.loadQueue().then(redraw);
  const pollMs = config.pollMs ?? 15_000;
  if (pollMs > 0) {
    setInterval(() => {
      void controller.loadQueue().then(redraw);
    }, pollMs);
  }
}

bootstrap();
