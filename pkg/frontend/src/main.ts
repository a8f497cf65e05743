import { GatewayClient } from "./api.js";
import { App } from "./app.js";

const root = document.getElementById("app");
if (root instanceof HTMLElement) {
  const app = new App(root, new GatewayClient(""));
  void app.start();
}
