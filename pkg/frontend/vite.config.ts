import { defineConfig } from "vite";

// base "./" keeps asset URLs relative so the bundle works when the node
// mounts dist/ under /console as well as at the dev-server root. The login
// form takes the node URL, so no dev proxy is needed.
export default defineConfig({
  base: "./",
});
