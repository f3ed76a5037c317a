#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nighthaze/image.hpp"
#include "nighthaze/tensor.hpp"

namespace nighthaze::nn {

/// Block used in the decoder stages.
enum class BlockKind { Naf, Res, Vit };
/// Which prior maps feed the query tokens; None replaces the queries by zeros.
enum class PriorMode { None, DcpOnly, BcpOnly, Full };

std::string to_string(BlockKind k);
std::string to_string(PriorMode m);
BlockKind parse_block_kind(const std::string& s);
PriorMode parse_prior_mode(const std::string& s);

struct NafBlockSpec {
    int channels = 16;
    int dw_expand = 2;
    int ffn_expand = 2;

    void validate() const;
};

struct ModelConfig {
    int base_width = 16;
    int num_scales = 3;
    std::vector<int> blocks_per_scale{1, 1};          // encoder, finest scale first
    std::vector<int> decoder_blocks_per_scale{1, 1};  // finest scale first
    int bottleneck_blocks = 8;
    int heads = 4;
    int embed_dim = 64;
    int prior_patch = 5;
    int mlp_hidden = 32;
    bool positional = true;
    int pos_grid = 16;
    int vit_window = 8;
    int dw_expand = 2;
    int ffn_expand = 2;
    BlockKind decoder_block = BlockKind::Naf;
    PriorMode prior = PriorMode::Full;

    int bottleneck_channels() const { return base_width << (num_scales - 1); }
    /// Input sides are padded up to a multiple of this.
    int pad_multiple() const { return 1 << (num_scales - 1); }
    void validate() const;

    /// `key=value` lines, one per field.
    std::string serialize() const;
    static ModelConfig parse(const std::string& text);
    bool operator==(const ModelConfig&) const = default;
};

/// Optional record of the cross-attention softmax weights of one forward pass.
struct ForwardTrace {
    std::vector<double> attention;  // [N, heads, Tq, Tk]
    Shape attention_shape;
};

/// Encoder / eight-block bottleneck / prior-query cross-attention / decoder
/// network over NCHW batches in [0,1].
class PriorQueryTransformer {
public:
    explicit PriorQueryTransformer(ModelConfig cfg, std::uint64_t seed = 0);

    const ModelConfig& config() const { return cfg_; }

    /// Copies share parameter storage; clone() duplicates it.
    PriorQueryTransformer clone() const;

    /// x is [N,3,H,W]; returns [N,3,H,W], unclamped (the training path).
    Tensor forward(const Tensor& x, ForwardTrace* trace = nullptr) const;
    /// No-grad forward clamped to [0,1].
    std::vector<ImageRGB> infer(const std::vector<ImageRGB>& batch) const;
    ImageRGB infer(const ImageRGB& img) const;

    /// Pre-MLP prior values per bottleneck cell, [N, T, 1]. x must already
    /// be padded to pad_multiple().
    Tensor prior_tokens(const Tensor& x) const;
    /// Query tokens fed to the cross-attention, [N, T, embed_dim].
    Tensor prior_queries(const Tensor& x) const;

    /// Cross-attention step on its own: `queries` [N,Tq,E] attend over the
    /// latent feature map [N,Cb,h,w]; returns the residual update (same shape
    /// as latent).
    Tensor cross_attention(const Tensor& queries, const Tensor& latent, ForwardTrace* trace = nullptr) const;

    std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    bool has_param(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t parameter_count() const;
    /// FNV-1a 64 over parameter names and raw values, as 16 hex digits.
    std::string parameter_hash() const;

    void zero_grad();

private:
    Tensor& add_param(const std::string& name, Shape shape, double bound, std::mt19937_64& rng);
    Tensor& add_const(const std::string& name, Shape shape, double value);
    void build_conv(const std::string& name, int cin, int cout, int k, std::mt19937_64& rng);
    void build_block(const std::string& name, BlockKind kind, int c, std::mt19937_64& rng);

    Tensor conv(const std::string& name, const Tensor& x, int stride, int pad) const;
    Tensor block(const std::string& name, BlockKind kind, const Tensor& x) const;
    Tensor naf_block(const std::string& name, const Tensor& x) const;
    Tensor res_block(const std::string& name, const Tensor& x) const;
    Tensor vit_block(const std::string& name, const Tensor& x) const;

    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::map<std::string, std::size_t> index_;
};

/// Stacks equally sized images into [N,3,H,W].
Tensor images_to_tensor(const std::vector<ImageRGB>& batch);
std::vector<ImageRGB> tensor_to_images(const Tensor& t, bool clamp = true);

/// Softmax(q kᵀ/√d) v per head with heads concatenated and passed through the
/// output projection (w_o, b_o); projections of q, k, v are the caller's.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, const Tensor& w_o,
                            const Tensor& b_o, std::vector<double>* weights = nullptr);

}  // namespace nighthaze::nn
