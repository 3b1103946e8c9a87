#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace p2mark {

struct ParamSlot {
    std::string name;
    std::vector<int64_t> shape;

    int64_t numel() const;
    bool operator==(const ParamSlot&) const = default;
};

using ParamLayout = std::vector<ParamSlot>;

// Row-major concatenation of per-parameter gradients in layout order.
struct GradientVector {
    torch::Tensor values;  // 1-D
    ParamLayout layout;

    int64_t size() const { return values.numel(); }
};

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

ParamLayout layout_of(const NamedTensors& params);

// grads[i] must carry layout[i].name and shape. Throws LayoutError otherwise.
GradientVector flatten_gradients(const NamedTensors& grads, const ParamLayout& layout);

// Inverse of flatten_gradients; tensors come back in layout order.
NamedTensors unflatten_gradients(const GradientVector& g);

// True when g_wm . g_gen < 0, i.e. the generator gradient would raise the watermark loss.
bool gradients_conflict(const GradientVector& g_gen, const GradientVector& g_wm);

// Closest vector to g_gen in the half-space {v : v . g_wm >= 0}. When the constraint already
// holds (including dot == 0) the input is returned untouched; otherwise
//   g_gen - (g_gen . g_wm / g_wm . g_wm) g_wm,
// with the dot products accumulated in double precision.
GradientVector project(const GradientVector& g_gen, const GradientVector& g_wm);

// Per-batch store for the watermark-loss gradient and the projected generator step.
//
// Usage within one batch: after backpropagating the watermark loss call capture(); after
// backpropagating the generator loss call apply() before the optimizer step. apply() consumes
// the stored gradient.
class GradientProjector {
public:
    explicit GradientProjector(bool enabled = true) : enabled_(enabled) {}

    bool enabled() const noexcept { return enabled_; }
    bool has_watermark_gradient() const noexcept { return stored_.has_value(); }

    // Stores the current .grad() of `params` (zeros for parameters without a gradient).
    void capture(const NamedTensors& params);

    // Rewrites the .grad() of `params` with the projected generator gradient. Returns true when
    // the projection fired. Throws SequencingError without a gradient captured since the last call.
    bool apply(const NamedTensors& params);

    int64_t fired_count() const noexcept { return fired_; }
    int64_t step_count() const noexcept { return steps_; }

private:
    bool enabled_;
    std::optional<GradientVector> stored_;
    int64_t fired_ = 0;
    int64_t steps_ = 0;
};

// Reads .grad() of each parameter, substituting zeros when undefined.
NamedTensors gradients_of(const NamedTensors& params);

}  // namespace p2mark
