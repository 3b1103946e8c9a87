#include "p2mark/adapter.hpp"

#include "p2mark/errors.hpp"

#include <cmath>

namespace p2mark {

namespace {

void check_rank(const torch::Tensor& s, int64_t rank, const char* where) {
    if (!s.defined())
        throw ConfigurationError(std::string(where) + ": adapter present but no scaling vector supplied");
    if (s.size(-1) != rank)
        throw ConfigurationError(std::string(where) + ": scaling vector has length " + std::to_string(s.size(-1)) +
                                 " but the adapter rank is " + std::to_string(rank));
}

}  // namespace

torch::Tensor wmlora_forward(const torch::Tensor& x, const torch::Tensor& base, const LowRankFactors& f,
                             const torch::Tensor& s) {
    check_rank(s, f.rank(), "wmlora_forward");
    if (base.dim() != 2 || x.size(-1) != base.size(1))
        throw FeatureShapeError("wmlora_forward: input width does not match the base matrix");
    auto h = torch::matmul(x, base.t());
    auto low = torch::matmul(x, f.down.t()) * s;
    return h + torch::matmul(low, f.up.t());
}

torch::Tensor merge_adapter(const torch::Tensor& base, const LowRankFactors& f, const torch::Tensor& s) {
    check_rank(s, f.rank(), "merge_adapter");
    if (s.dim() != 1) throw ConfigurationError("merge_adapter: expected a single scaling vector");
    return base + torch::matmul(f.up * s.unsqueeze(0), f.down);
}

WmConv1dImpl::WmConv1dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel, ConvGeometry geometry)
    : in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel), geometry_(geometry) {
    const auto shape = geometry_.transposed ? std::vector<int64_t>{in_channels, out_channels, kernel}
                                            : std::vector<int64_t>{out_channels, in_channels, kernel};
    // Same defaults as torch::nn::Conv1d: kaiming-uniform kernel, uniform bias.
    auto w = torch::empty(shape);
    torch::nn::init::kaiming_uniform_(w, std::sqrt(5.0));
    const double fan_in = static_cast<double>((geometry_.transposed ? out_channels : in_channels) * kernel);
    const double bound = 1.0 / std::sqrt(fan_in);
    weight = register_parameter("weight", w);
    bias = register_parameter("bias", torch::empty({out_channels}).uniform_(-bound, bound));
}

void WmConv1dImpl::attach_adapter(int64_t rank) {
    if (rank < 1) throw ConfigurationError("adapter rank must be >= 1");
    if (has_adapter()) throw ConfigurationError("layer already carries an adapter");
    rank_ = rank;
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(in_channels_ * kernel_));
    auto down = geometry_.transposed ? torch::randn({in_channels_, rank, kernel_}) : torch::randn({rank, in_channels_, kernel_});
    adapter_down = register_parameter("adapter_down", down * std_dev);
    adapter_up = register_parameter("adapter_up", torch::zeros({out_channels_, rank, 1}));
}

void WmConv1dImpl::freeze_base() {
    weight.set_requires_grad(false);
    bias.set_requires_grad(false);
}

torch::Tensor WmConv1dImpl::base_forward(const torch::Tensor& x, const torch::Tensor& kernel,
                                         const torch::Tensor& b) const {
    const auto& g = geometry_;
    if (g.transposed)
        return torch::conv_transpose1d(x, kernel, b, g.stride, g.padding, g.output_padding, 1, g.dilation);
    return torch::conv1d(x, kernel, b, g.stride, g.padding, g.dilation);
}

torch::Tensor WmConv1dImpl::forward(const torch::Tensor& x, const torch::Tensor& s) {
    if (x.dim() != 3 || x.size(1) != in_channels_)
        throw FeatureShapeError("conv: expected (batch, " + std::to_string(in_channels_) + ", T) input");
    auto y = base_forward(x, weight, bias);
    if (!has_adapter()) return y;
    check_rank(s, rank_, "conv adapter");
    auto scale = s.dim() == 1 ? s.view({1, rank_, 1}) : s.unsqueeze(-1);
    auto low = base_forward(x, adapter_down, {}) * scale;
    return y + torch::conv1d(low, adapter_up);
}

torch::Tensor WmConv1dImpl::merged_weight(const torch::Tensor& s) const {
    if (!has_adapter()) return weight.clone();
    check_rank(s, rank_, "merged_weight");
    if (s.dim() != 1) throw ConfigurationError("merged_weight: expected a single scaling vector");
    auto up = adapter_up.view({out_channels_, rank_});
    if (!geometry_.transposed) {
        // (C_out) x (C_in * K) matricization of the kernel.
        LowRankFactors f{up, adapter_down.reshape({rank_, in_channels_ * kernel_})};
        return merge_adapter(weight.reshape({out_channels_, in_channels_ * kernel_}), f, s).view(weight.sizes());
    }
    auto delta = torch::einsum("ipt,p,op->iot", {adapter_down, s, up});
    return weight + delta;
}

bool AdapterSelector::matches(const std::string& layer_name, const WmConv1dImpl& layer) const {
    if (layer.transposed() && !include_transposed) return false;
    return std::regex_match(layer_name, std::regex(pattern));
}

std::vector<std::string> inject_adapters(AdaptableNetwork& net, torch::nn::Module& module, int64_t rank,
                                         const AdapterSelector& selector) {
    std::vector<std::string> adapted;
    for (auto& [name, layer] : net.conv_layers())
        if (selector.matches(name, *layer)) adapted.push_back(name);
    if (adapted.empty())
        throw ConfigurationError("inject_adapters: selector '" + selector.pattern + "' matches no convolution");

    for (auto& p : module.parameters()) p.set_requires_grad(false);
    for (auto& [name, layer] : net.conv_layers())
        if (selector.matches(name, *layer)) layer->attach_adapter(rank);
    return adapted;
}

std::vector<std::pair<std::string, torch::Tensor>> adapter_parameters(const AdaptableNetwork& net) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& [name, layer] : net.conv_layers()) {
        if (!layer->has_adapter()) continue;
        out.emplace_back(name + ".adapter_down", layer->adapter_down);
        out.emplace_back(name + ".adapter_up", layer->adapter_up);
    }
    return out;
}

int64_t adapter_parameter_count(const AdaptableNetwork& net) {
    int64_t total = 0;
    for (const auto& [name, layer] : net.conv_layers())
        if (layer->has_adapter())
            total += layer->rank() * (layer->out_channels() + layer->in_channels() * layer->kernel_size());
    return total;
}

}  // namespace p2mark
