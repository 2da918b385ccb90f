import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    // The e2e file boots the Python service and walks three full sessions.
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
