/** Browser entry point: wires the stream, viewmodel, keyboard controller,
 * and canvas renderer together against the service that served this page. */

import { ApiClient, StateStream } from "./net.js";
import { render } from "./render.js";
import type { Scene } from "./types.js";
import { ViewModel } from "./viewmodel.js";
import { KeyController } from "./keys.js";

async function start(): Promise<void> {
  const canvas = document.getElementById("view") as HTMLCanvasElement;
  const logEl = document.getElementById("log") as HTMLElement;
  const bannerEl = document.getElementById("banner") as HTMLElement;
  const ctx = canvas.getContext("2d")!;

  const api = new ApiClient("");
  const scene: Scene = await api.scene();
  const vm = new ViewModel();
  const keys = new KeyController(api, vm, scene);

  const wsUrl =
    (location.protocol === "https:" ? "wss://" : "ws://") +
    location.host +
    "/stream";
  const stream = new StateStream(
    wsUrl,
    WebSocket as unknown as ConstructorParameters<typeof StateStream>[1],
  );
  stream.onEvent = (msg) => {
    vm.acceptEvent(msg);
    logEl.textContent = vm.log
      .slice(-12)
      .map((l) => l.text)
      .join("\n");
  };
  stream.onMalformed = () => {
    vm.banner = "malformed state frame from service";
  };

  window.addEventListener("keydown", (ev) => {
    if (ev.repeat) return;
    void keys.handle(ev.key);
  });

  function tick(): void {
    const f = stream.takeFrame(); // drop-to-latest: render newest only
    if (f) vm.acceptFrame(f);
    if (vm.frame) render(ctx, scene, vm.frame, vm.pulsing(Date.now()));
    bannerEl.style.display = vm.banner ? "block" : "none";
    bannerEl.textContent = vm.banner ?? "";
    requestAnimationFrame(tick);
  }
  requestAnimationFrame(tick);
}

void start();
