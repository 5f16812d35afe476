# Package marker for tests
