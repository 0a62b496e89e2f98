"""Published cost figures (inference estimate table) and worked-example values."""

COLUMNS = ["devices", "flops", "crossbars", "crossbars_with_copies", "ops", "tile_ops",
           "latency_ms", "latency_pipelined_ms", "latency_copies_ms", "energy_per_image_mj"]

TABLE = {
    "lenet": [6.4e3, 273e3, 6, 9, 641, 707, 0.46, 0.42, 0.05, 0.0019],
    "vgg8": [1.1e6, 77.8e6, 78, 85, 2690, 7713, 1.94, 0.74, 0.19, 0.023],
    "resnet18": [22.3e6, 1.1e9, 1480, 1554, 6801, 81922, 4.90, 0.75, 0.20, 0.24],
}

# the table rounds LeNet's copy latency to 0.05; the accompanying text gives 0.053 ms
LENET_COPIES_TEXT_MS = 0.053


def reference(model: str, column: str) -> float:
    if model == "lenet" and column == "latency_copies_ms":
        return LENET_COPIES_TEXT_MS
    return TABLE[model][COLUMNS.index(column)]
