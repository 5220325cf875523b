import { ApiClient } from "./api.js";
import { initUi } from "./ui.js";

// service base URL: ?api=http://host:port overrides the default local port
const params = new URLSearchParams(window.location.search);
const base = params.get("api") ?? "http://127.0.0.1:8008";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app element");
}
initUi(root, new ApiClient(base));
