# Anchors the test root so `import helpers` resolves from any invocation dir.
