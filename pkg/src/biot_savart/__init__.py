"""Full-plane Biot-Savart evaluation and vorticity blobs."""
