# Package marker for test helpers
