#include "p2mark/wgopo.hpp"

#include "p2mark/errors.hpp"

namespace p2mark {

int64_t ParamSlot::numel() const {
    int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

ParamLayout layout_of(const NamedTensors& params) {
    ParamLayout layout;
    layout.reserve(params.size());
    for (const auto& [name, t] : params) layout.push_back({name, t.sizes().vec()});
    return layout;
}

GradientVector flatten_gradients(const NamedTensors& grads, const ParamLayout& layout) {
    if (grads.size() != layout.size())
        throw LayoutError("flatten_gradients: expected " + std::to_string(layout.size()) + " gradients, got " +
                          std::to_string(grads.size()));
    std::vector<torch::Tensor> parts;
    parts.reserve(grads.size());
    for (size_t i = 0; i < grads.size(); ++i) {
        const auto& [name, g] = grads[i];
        if (name != layout[i].name) throw LayoutError("flatten_gradients: expected '" + layout[i].name + "', got '" + name + "'");
        if (!g.defined()) throw LayoutError("flatten_gradients: missing gradient for '" + name + "'");
        if (g.sizes().vec() != layout[i].shape) throw LayoutError("flatten_gradients: misshapen gradient for '" + name + "'");
        parts.push_back(g.detach().contiguous().view({-1}));
    }
    auto values = parts.empty() ? torch::empty({0}) : torch::cat(parts);
    return GradientVector{values, layout};
}

NamedTensors unflatten_gradients(const GradientVector& g) {
    NamedTensors out;
    out.reserve(g.layout.size());
    int64_t offset = 0;
    for (const auto& slot : g.layout) {
        const int64_t n = slot.numel();
        out.emplace_back(slot.name, g.values.narrow(0, offset, n).view(slot.shape).clone());
        offset += n;
    }
    if (offset != g.size()) throw LayoutError("unflatten_gradients: layout does not cover the vector");
    return out;
}

namespace {

void check_layouts(const GradientVector& a, const GradientVector& b) {
    if (a.layout != b.layout || a.size() != b.size())
        throw LayoutError("gradient layouts differ between the generator and watermark gradients");
}

double dot64(const torch::Tensor& a, const torch::Tensor& b) {
    return torch::dot(a.to(torch::kFloat64), b.to(torch::kFloat64)).item<double>();
}

}  // namespace

bool gradients_conflict(const GradientVector& g_gen, const GradientVector& g_wm) {
    check_layouts(g_gen, g_wm);
    return dot64(g_wm.values, g_gen.values) < 0.0;
}

GradientVector project(const GradientVector& g_gen, const GradientVector& g_wm) {
    check_layouts(g_gen, g_wm);
    const double cross = dot64(g_gen.values, g_wm.values);
    if (!(cross < 0.0)) return g_gen;
    // cross < 0 implies g_wm != 0.
    const double coef = cross / dot64(g_wm.values, g_wm.values);
    auto projected = g_gen.values.to(torch::kFloat64) - coef * g_wm.values.to(torch::kFloat64);
    return GradientVector{projected.to(g_gen.values.scalar_type()), g_gen.layout};
}

NamedTensors gradients_of(const NamedTensors& params) {
    NamedTensors out;
    out.reserve(params.size());
    for (const auto& [name, p] : params) {
        auto g = p.grad();
        out.emplace_back(name, g.defined() ? g : torch::zeros_like(p));
    }
    return out;
}

void GradientProjector::capture(const NamedTensors& params) {
    stored_ = flatten_gradients(gradients_of(params), layout_of(params));
}

bool GradientProjector::apply(const NamedTensors& params) {
    if (!stored_)
        throw SequencingError("generator step requested without a watermark gradient from the same batch");
    auto g_wm = std::move(*stored_);
    stored_.reset();
    ++steps_;
    if (!enabled_) return false;

    auto g_gen = flatten_gradients(gradients_of(params), layout_of(params));
    if (!gradients_conflict(g_gen, g_wm)) return false;

    auto projected = unflatten_gradients(project(g_gen, g_wm));
    torch::NoGradGuard no_grad;
    for (size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].second;
        if (p.grad().defined())
            p.mutable_grad().copy_(projected[i].second);
        else
            p.mutable_grad() = projected[i].second;
    }
    ++fired_;
    return true;
}

}  // namespace p2mark
