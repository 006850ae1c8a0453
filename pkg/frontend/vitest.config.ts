import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // e2e boots a real service; unit files finish long before this.
    testTimeout: 30_000,
    hookTimeout: 60_000,
  },
});
