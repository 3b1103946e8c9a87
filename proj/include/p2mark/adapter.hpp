#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <regex>
#include <string>
#include <vector>

namespace p2mark {

// Dense WM-LoRA factors for a d x k base matrix: up = B (d x r), down = A (r x k).
struct LowRankFactors {
    torch::Tensor up;
    torch::Tensor down;

    int64_t rank() const { return down.size(0); }
};

// h = W0 x + B diag(s) A x for x of shape (k) or (batch, k); s has shape (r) or (batch, r).
torch::Tensor wmlora_forward(const torch::Tensor& x, const torch::Tensor& base, const LowRankFactors& f,
                             const torch::Tensor& s);

// W0 + B diag(s) A.
torch::Tensor merge_adapter(const torch::Tensor& base, const LowRankFactors& f, const torch::Tensor& s);

struct ConvGeometry {
    int64_t stride = 1;
    int64_t padding = 0;
    int64_t dilation = 1;
    int64_t output_padding = 0;
    bool transposed = false;
};

// 1-D convolution (plain or transposed) that can carry a watermark-conditioned low-rank branch.
//
// Without an adapter it is an ordinary convolution. With one, the output is
//   conv(x, W0) + up(s * down(x))
// where `down` convolves to r channels with the base geometry, s scales each of the r
// channels per batch item and `up` is a pointwise r -> C_out convolution. The same update
// merged into the kernel is dW[o, i, t] = sum_p up[o, p] s[p] down[p, i, t] (plain) or
// dW[i, o, t] = sum_p down[i, p, t] s[p] up[o, p] (transposed).
class WmConv1dImpl : public torch::nn::Module {
public:
    WmConv1dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel, ConvGeometry geometry = {});

    int64_t in_channels() const noexcept { return in_channels_; }
    int64_t out_channels() const noexcept { return out_channels_; }
    int64_t kernel_size() const noexcept { return kernel_; }
    const ConvGeometry& geometry() const noexcept { return geometry_; }
    bool transposed() const noexcept { return geometry_.transposed; }

    bool has_adapter() const noexcept { return rank_ > 0; }
    int64_t rank() const noexcept { return rank_; }

    // Adds the low-rank branch with up = 0 and down ~ N(0, 1 / fan_in), then freezes the base.
    void attach_adapter(int64_t rank);
    void freeze_base();

    // x: (batch, C_in, T). s: (r) or (batch, r); required iff an adapter is attached.
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& s = {});

    // Base kernel plus the conditioned low-rank update for a single scaling vector s of shape (r).
    torch::Tensor merged_weight(const torch::Tensor& s) const;

    torch::Tensor weight;
    torch::Tensor bias;
    torch::Tensor adapter_down;  // A: (r, C_in, K), transposed: (C_in, r, K)
    torch::Tensor adapter_up;    // B: (C_out, r, 1)

private:
    torch::Tensor base_forward(const torch::Tensor& x, const torch::Tensor& kernel, const torch::Tensor& b) const;

    int64_t in_channels_;
    int64_t out_channels_;
    int64_t kernel_;
    ConvGeometry geometry_;
    int64_t rank_ = 0;
};
TORCH_MODULE(WmConv1d);

// Names which convolutions receive adapters. Transposed convolutions are skipped unless
// include_transposed is set.
struct AdapterSelector {
    std::string pattern = ".*";
    bool include_transposed = false;

    bool matches(const std::string& layer_name, const WmConv1dImpl& layer) const;
};

// Anything that owns named WmConv1d layers and can be driven with a scaling vector.
class AdaptableNetwork {
public:
    virtual ~AdaptableNetwork() = default;
    virtual std::vector<std::pair<std::string, WmConv1d>> conv_layers() const = 0;
};

// Wraps the selected layers, freezes every base parameter of `net`, and returns the names of
// the adapted layers. Throws ConfigurationError when the selector matches nothing.
std::vector<std::string> inject_adapters(AdaptableNetwork& net, torch::nn::Module& module, int64_t rank,
                                         const AdapterSelector& selector);

// Flattened (name, tensor) list of every adapter factor in layer order:
// "<layer>.adapter_down", "<layer>.adapter_up".
std::vector<std::pair<std::string, torch::Tensor>> adapter_parameters(const AdaptableNetwork& net);

// Sum over adapted layers of r * (d + k) with d = C_out and k = C_in * K.
int64_t adapter_parameter_count(const AdaptableNetwork& net);

}  // namespace p2mark
