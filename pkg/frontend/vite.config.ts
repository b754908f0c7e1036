import { defineConfig } from "vitest/config";

export default defineConfig({
  base: "./",
  server: {
    proxy: { "/v1": "http://127.0.0.1:8077" },
  },
  test: {
    environment: "jsdom",
  },
});
