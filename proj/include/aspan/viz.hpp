#pragma once

#include <filesystem>

#include "aspan/flow.hpp"
#include "aspan/matcher.hpp"
#include "aspan/span_attention.hpp"
#include "aspan/tensor.hpp"

namespace aspan {

// H x W x C image in [0, 1] from an .aspt tensor or a binary PGM/PPM (P5/P6).
Tensor read_image(const std::filesystem::path& path);
// Binary PPM of an H x W x 1 or H x W x 3 image in [0, 1].
void write_ppm(const std::filesystem::path& path, const Tensor& image);

// Side-by-side A|B with a line per match, colored from low (blue) to high (red) score.
Tensor match_overlay(const Tensor& image_a, const Tensor& image_b, const MatchSet& m);

// Per-cell mean log sigma on a linear blue-to-red map; red marks the smallest
// uncertainty. Cells are expanded to the image size.
Tensor uncertainty_heatmap(const FlowMap& flow);

// Target image with the span rectangle of every `every`-th query cell outlined.
Tensor span_overlay(const Tensor& image_b, const SpanGrid& span, std::size_t stride, std::size_t every = 1);

}  // namespace aspan
