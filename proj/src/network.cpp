#include "nighthaze/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "nighthaze/error.hpp"
#include "nighthaze/ops.hpp"
#include "nighthaze/priors.hpp"

namespace nighthaze::nn {

namespace {

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stoi(item));
    }
    return out;
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ParameterError("model config: bad integer for " + key + ": '" + value + "'");
    }
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Largest window <= preferred that divides both sides.
int fit_window(int preferred, int h, int w) {
    int win = std::max(1, preferred);
    while (win > 1 && (h % win || w % win)) --win;
    return win;
}

}  // namespace

std::string to_string(BlockKind k) {
    switch (k) {
        case BlockKind::Naf: return "naf";
        case BlockKind::Res: return "res";
        case BlockKind::Vit: return "vit";
    }
    return "naf";
}

std::string to_string(PriorMode m) {
    switch (m) {
        case PriorMode::None: return "none";
        case PriorMode::DcpOnly: return "dcp";
        case PriorMode::BcpOnly: return "bcp";
        case PriorMode::Full: return "full";
    }
    return "full";
}

BlockKind parse_block_kind(const std::string& s) {
    if (s == "naf") return BlockKind::Naf;
    if (s == "res") return BlockKind::Res;
    if (s == "vit") return BlockKind::Vit;
    throw ParameterError("unknown block kind '" + s + "' (expected naf, res or vit)");
}

PriorMode parse_prior_mode(const std::string& s) {
    if (s == "none") return PriorMode::None;
    if (s == "dcp") return PriorMode::DcpOnly;
    if (s == "bcp") return PriorMode::BcpOnly;
    if (s == "full") return PriorMode::Full;
    throw ParameterError("unknown prior mode '" + s + "' (expected none, dcp, bcp or full)");
}

void NafBlockSpec::validate() const {
    if (channels < 1) throw ParameterError("NAF block needs at least one channel");
    if (dw_expand < 1 || ffn_expand < 1) throw ParameterError("NAF block expansions must be >= 1");
    if ((channels * dw_expand) % 2 || (channels * ffn_expand) % 2) {
        throw ParameterError("NAF block expanded widths must be even for the simple gate");
    }
}

void ModelConfig::validate() const {
    if (base_width < 1) throw ParameterError("base_width must be >= 1");
    if (num_scales < 2) throw ParameterError("num_scales must be >= 2");
    if (static_cast<int>(blocks_per_scale.size()) != num_scales - 1 ||
        static_cast<int>(decoder_blocks_per_scale.size()) != num_scales - 1) {
        throw ParameterError("blocks_per_scale and decoder_blocks_per_scale need num_scales-1 entries");
    }
    for (int b : blocks_per_scale)
        if (b < 0) throw ParameterError("negative block count");
    for (int b : decoder_blocks_per_scale)
        if (b < 0) throw ParameterError("negative block count");
    if (bottleneck_blocks < 0) throw ParameterError("bottleneck_blocks must be >= 0");
    if (heads < 1 || embed_dim < 1 || embed_dim % heads) throw ParameterError("embed_dim must be divisible by heads");
    if (prior_patch < 1 || prior_patch % 2 == 0) throw ParameterError("prior_patch must be odd");
    if (mlp_hidden < 1) throw ParameterError("mlp_hidden must be >= 1");
    if (pos_grid < 1) throw ParameterError("pos_grid must be >= 1");
    if (vit_window < 1) throw ParameterError("vit_window must be >= 1");
    NafBlockSpec{base_width, dw_expand, ffn_expand}.validate();
}

std::string ModelConfig::serialize() const {
    std::ostringstream os;
    os << "base_width=" << base_width << "\n"
       << "num_scales=" << num_scales << "\n"
       << "blocks_per_scale=" << join(blocks_per_scale) << "\n"
       << "decoder_blocks_per_scale=" << join(decoder_blocks_per_scale) << "\n"
       << "bottleneck_blocks=" << bottleneck_blocks << "\n"
       << "heads=" << heads << "\n"
       << "embed_dim=" << embed_dim << "\n"
       << "prior_patch=" << prior_patch << "\n"
       << "mlp_hidden=" << mlp_hidden << "\n"
       << "positional=" << (positional ? 1 : 0) << "\n"
       << "pos_grid=" << pos_grid << "\n"
       << "vit_window=" << vit_window << "\n"
       << "dw_expand=" << dw_expand << "\n"
       << "ffn_expand=" << ffn_expand << "\n"
       << "decoder_block=" << to_string(decoder_block) << "\n"
       << "prior=" << to_string(prior) << "\n";
    return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParameterError("model config: expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key == "base_width") c.base_width = parse_int(key, value);
        else if (key == "num_scales") c.num_scales = parse_int(key, value);
        else if (key == "blocks_per_scale") c.blocks_per_scale = split_ints(value);
        else if (key == "decoder_blocks_per_scale") c.decoder_blocks_per_scale = split_ints(value);
        else if (key == "bottleneck_blocks") c.bottleneck_blocks = parse_int(key, value);
        else if (key == "heads") c.heads = parse_int(key, value);
        else if (key == "embed_dim") c.embed_dim = parse_int(key, value);
        else if (key == "prior_patch") c.prior_patch = parse_int(key, value);
        else if (key == "mlp_hidden") c.mlp_hidden = parse_int(key, value);
        else if (key == "positional") c.positional = parse_int(key, value) != 0;
        else if (key == "pos_grid") c.pos_grid = parse_int(key, value);
        else if (key == "vit_window") c.vit_window = parse_int(key, value);
        else if (key == "dw_expand") c.dw_expand = parse_int(key, value);
        else if (key == "ffn_expand") c.ffn_expand = parse_int(key, value);
        else if (key == "decoder_block") c.decoder_block = parse_block_kind(value);
        else if (key == "prior") c.prior = parse_prior_mode(value);
        else throw ParameterError("model config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

PriorQueryTransformer::PriorQueryTransformer(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const int w = cfg_.base_width, s = cfg_.num_scales, cb = cfg_.bottleneck_channels(), e = cfg_.embed_dim;

    build_conv("intro", 3, w, 3, rng);
    for (int i = 0; i < s - 1; ++i) {
        const int c = w << i;
        for (int j = 0; j < cfg_.blocks_per_scale[i]; ++j)
            build_block("enc" + std::to_string(i) + "." + std::to_string(j), BlockKind::Naf, c, rng);
        build_conv("down" + std::to_string(i), c, 2 * c, 2, rng);
    }
    for (int j = 0; j < cfg_.bottleneck_blocks; ++j) build_block("mid." + std::to_string(j), BlockKind::Naf, cb, rng);

    add_param("query.fc1.weight", {1, cfg_.mlp_hidden}, 1.0, rng);
    add_param("query.fc1.bias", {cfg_.mlp_hidden}, 1.0, rng);
    const double bh = 1.0 / std::sqrt(static_cast<double>(cfg_.mlp_hidden));
    add_param("query.fc2.weight", {cfg_.mlp_hidden, e}, bh, rng);
    add_param("query.fc2.bias", {e}, bh, rng);
    if (cfg_.positional) add_param("query.pos", {1, e, cfg_.pos_grid, cfg_.pos_grid}, 0.02, rng);

    add_const("xattn.norm.weight", {cb}, 1.0);
    add_const("xattn.norm.bias", {cb}, 0.0);
    const double be = 1.0 / std::sqrt(static_cast<double>(e)), bc = 1.0 / std::sqrt(static_cast<double>(cb));
    add_param("xattn.q.weight", {e, e}, be, rng);
    add_param("xattn.q.bias", {e}, be, rng);
    add_param("xattn.k.weight", {cb, e}, bc, rng);
    add_param("xattn.k.bias", {e}, bc, rng);
    add_param("xattn.v.weight", {cb, e}, bc, rng);
    add_param("xattn.v.bias", {e}, bc, rng);
    add_param("xattn.out.weight", {e, cb}, be, rng);
    add_param("xattn.out.bias", {cb}, be, rng);

    for (int i = s - 2; i >= 0; --i) {
        const int c = w << i;
        build_conv("up" + std::to_string(i), 2 * c, 4 * c, 1, rng);
        build_conv("skip" + std::to_string(i), c, c, 1, rng);
        for (int j = 0; j < cfg_.decoder_blocks_per_scale[i]; ++j)
            build_block("dec" + std::to_string(i) + "." + std::to_string(j), cfg_.decoder_block, c, rng);
    }
    build_conv("ending", w, 3, 3, rng);
}

PriorQueryTransformer PriorQueryTransformer::clone() const {
    PriorQueryTransformer copy = *this;
    for (auto& [name, t] : copy.params_) t = Tensor::from(t.shape(), t.values(), true);
    return copy;
}

Tensor& PriorQueryTransformer::add_param(const std::string& name, Shape shape, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(numel(shape));
    for (double& x : v) x = dist(rng);
    index_[name] = params_.size();
    params_.emplace_back(name, Tensor::from(shape, std::move(v), true));
    return params_.back().second;
}

Tensor& PriorQueryTransformer::add_const(const std::string& name, Shape shape, double value) {
    index_[name] = params_.size();
    params_.emplace_back(name, Tensor::full(shape, value, true));
    return params_.back().second;
}

void PriorQueryTransformer::build_conv(const std::string& name, int cin, int cout, int k, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
    add_param(name + ".weight", {cout, cin, k, k}, bound, rng);
    add_param(name + ".bias", {cout}, bound, rng);
}

void PriorQueryTransformer::build_block(const std::string& name, BlockKind kind, int c, std::mt19937_64& rng) {
    switch (kind) {
        case BlockKind::Naf: {
            const int dw = c * cfg_.dw_expand, ffn = c * cfg_.ffn_expand;
            add_const(name + ".norm1.weight", {c}, 1.0);
            add_const(name + ".norm1.bias", {c}, 0.0);
            build_conv(name + ".conv1", c, dw, 1, rng);
            const double b3 = 1.0 / 3.0;
            add_param(name + ".dw.weight", {dw, 1, 3, 3}, b3, rng);
            add_param(name + ".dw.bias", {dw}, b3, rng);
            build_conv(name + ".sca", dw / 2, dw / 2, 1, rng);
            build_conv(name + ".conv3", dw / 2, c, 1, rng);
            add_const(name + ".beta", {1, c, 1, 1}, 0.0);
            add_const(name + ".norm2.weight", {c}, 1.0);
            add_const(name + ".norm2.bias", {c}, 0.0);
            build_conv(name + ".conv4", c, ffn, 1, rng);
            build_conv(name + ".conv5", ffn / 2, c, 1, rng);
            add_const(name + ".gamma", {1, c, 1, 1}, 0.0);
            break;
        }
        case BlockKind::Res:
            build_conv(name + ".conv1", c, c, 3, rng);
            build_conv(name + ".conv2", c, c, 3, rng);
            break;
        case BlockKind::Vit: {
            const double b = 1.0 / std::sqrt(static_cast<double>(c));
            add_const(name + ".norm1.weight", {c}, 1.0);
            add_const(name + ".norm1.bias", {c}, 0.0);
            for (const char* p : {".q", ".k", ".v", ".proj"}) {
                add_param(name + p + ".weight", {c, c}, b, rng);
                add_param(name + p + ".bias", {c}, b, rng);
            }
            add_const(name + ".norm2.weight", {c}, 1.0);
            add_const(name + ".norm2.bias", {c}, 0.0);
            add_param(name + ".fc1.weight", {c, 2 * c}, b, rng);
            add_param(name + ".fc1.bias", {2 * c}, b, rng);
            const double b2 = 1.0 / std::sqrt(2.0 * c);
            add_param(name + ".fc2.weight", {2 * c, c}, b2, rng);
            add_param(name + ".fc2.bias", {c}, b2, rng);
            break;
        }
    }
}

Tensor& PriorQueryTransformer::param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("no parameter named '" + name + "'");
    return params_[it->second].second;
}

const Tensor& PriorQueryTransformer::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("no parameter named '" + name + "'");
    return params_[it->second].second;
}

std::size_t PriorQueryTransformer::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

std::string PriorQueryTransformer::parameter_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, t] : params_) {
        feed(name.data(), name.size());
        feed(t.values().data(), t.numel() * sizeof(double));
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void PriorQueryTransformer::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

Tensor PriorQueryTransformer::conv(const std::string& name, const Tensor& x, int stride, int pad) const {
    return conv2d(x, param(name + ".weight"), param(name + ".bias"), stride, pad);
}

Tensor PriorQueryTransformer::block(const std::string& name, BlockKind kind, const Tensor& x) const {
    switch (kind) {
        case BlockKind::Naf: return naf_block(name, x);
        case BlockKind::Res: return res_block(name, x);
        case BlockKind::Vit: return vit_block(name, x);
    }
    return x;
}

Tensor PriorQueryTransformer::naf_block(const std::string& name, const Tensor& x) const {
    Tensor y = layer_norm_channels(x, param(name + ".norm1.weight"), param(name + ".norm1.bias"));
    y = conv(name + ".conv1", y, 1, 0);
    y = depthwise_conv3x3(y, param(name + ".dw.weight"), param(name + ".dw.bias"));
    y = simple_gate(y);
    y = mul_channels(y, conv(name + ".sca", global_avg_pool(y), 1, 0));
    y = conv(name + ".conv3", y, 1, 0);
    const Tensor mid = add(x, mul_channels(y, param(name + ".beta")));

    Tensor z = layer_norm_channels(mid, param(name + ".norm2.weight"), param(name + ".norm2.bias"));
    z = conv(name + ".conv4", z, 1, 0);
    z = simple_gate(z);
    z = conv(name + ".conv5", z, 1, 0);
    return add(mid, mul_channels(z, param(name + ".gamma")));
}

Tensor PriorQueryTransformer::res_block(const std::string& name, const Tensor& x) const {
    Tensor y = relu(conv(name + ".conv1", x, 1, 1));
    return add(x, conv(name + ".conv2", y, 1, 1));
}

Tensor PriorQueryTransformer::vit_block(const std::string& name, const Tensor& x) const {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int win = fit_window(cfg_.vit_window, h, w);
    const int heads = c % cfg_.heads == 0 ? cfg_.heads : 1;
    const Tensor tokens = window_partition(x, win);
    const Tensor t = layer_norm_tokens(tokens, param(name + ".norm1.weight"), param(name + ".norm1.bias"));
    auto proj = [&](const char* p, const Tensor& in) {
        return linear(in, param(name + p + ".weight"), param(name + p + ".bias"));
    };
    const Tensor attn = multi_head_attention(proj(".q", t), proj(".k", t), proj(".v", t), heads,
                                             param(name + ".proj.weight"), param(name + ".proj.bias"));
    const Tensor mid = add(tokens, attn);
    Tensor f = layer_norm_tokens(mid, param(name + ".norm2.weight"), param(name + ".norm2.bias"));
    f = proj(".fc2", gelu(proj(".fc1", f)));
    return window_merge(add(mid, f), n, h, w, win);
}

Tensor PriorQueryTransformer::prior_tokens(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 3) throw ShapeError("prior_tokens: expected [N,3,H,W], got " + shape_string(x.shape()));
    const int m = cfg_.pad_multiple();
    if (x.dim(2) % m || x.dim(3) % m) throw ShapeError("prior_tokens: input not padded to a multiple of " + std::to_string(m));
    const auto images = tensor_to_images(x, false);
    const int n = x.dim(0), hb = x.dim(2) / m, wb = x.dim(3) / m;
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n) * hb * wb);
    for (const auto& img : images) {
        ImageGray sum(img.height(), img.width(), 0.0);
        if (cfg_.prior == PriorMode::Full || cfg_.prior == PriorMode::DcpOnly) {
            const ImageGray d = dark_channel(img, cfg_.prior_patch);
            for (std::size_t i = 0; i < d.data().size(); ++i) sum.data()[i] += d.data()[i];
        }
        if (cfg_.prior == PriorMode::Full || cfg_.prior == PriorMode::BcpOnly) {
            const ImageGray b = bright_channel(img, cfg_.prior_patch);
            for (std::size_t i = 0; i < b.data().size(); ++i) sum.data()[i] += b.data()[i];
        }
        const ImageGray pooled = average_pool(sum, m);
        out.insert(out.end(), pooled.values().begin(), pooled.values().end());
    }
    return Tensor::from({n, hb * wb, 1}, std::move(out));
}

Tensor PriorQueryTransformer::prior_queries(const Tensor& x) const {
    const int m = cfg_.pad_multiple();
    const int n = x.dim(0), hb = x.dim(2) / m, wb = x.dim(3) / m;
    if (cfg_.prior == PriorMode::None) return Tensor::zeros({n, hb * wb, cfg_.embed_dim});
    const Tensor tokens = prior_tokens(x);
    Tensor q = gelu(linear(tokens, param("query.fc1.weight"), param("query.fc1.bias")));
    q = linear(q, param("query.fc2.weight"), param("query.fc2.bias"));
    if (cfg_.positional) q = add_batch_broadcast(q, to_tokens(resize_bilinear(param("query.pos"), hb, wb)));
    return q;
}

Tensor PriorQueryTransformer::cross_attention(const Tensor& queries, const Tensor& latent, ForwardTrace* trace) const {
    const Tensor kv = layer_norm_tokens(to_tokens(latent), param("xattn.norm.weight"), param("xattn.norm.bias"));
    const Tensor q = linear(queries, param("xattn.q.weight"), param("xattn.q.bias"));
    const Tensor k = linear(kv, param("xattn.k.weight"), param("xattn.k.bias"));
    const Tensor v = linear(kv, param("xattn.v.weight"), param("xattn.v.bias"));
    std::vector<double>* weights = trace ? &trace->attention : nullptr;
    const Tensor o = multi_head_attention(q, k, v, cfg_.heads, param("xattn.out.weight"), param("xattn.out.bias"), weights);
    if (trace) trace->attention_shape = {latent.dim(0), cfg_.heads, queries.dim(1), kv.dim(1)};
    if (o.dim(1) != latent.dim(2) * latent.dim(3)) {
        throw ShapeError("cross_attention: query count must match the latent grid");
    }
    return from_tokens(o, latent.dim(2), latent.dim(3));
}

Tensor PriorQueryTransformer::forward(const Tensor& x, ForwardTrace* trace) const {
    if (x.rank() != 4 || x.dim(1) != 3) throw ShapeError("forward: expected [N,3,H,W], got " + shape_string(x.shape()));
    const int h = x.dim(2), w = x.dim(3), m = cfg_.pad_multiple();
    const int ph = (m - h % m) % m, pw = (m - w % m) % m;
    const Tensor xp = reflect_pad(x, ph, pw);

    Tensor f = conv("intro", xp, 1, 1);
    std::vector<Tensor> skips;
    for (int i = 0; i < cfg_.num_scales - 1; ++i) {
        for (int j = 0; j < cfg_.blocks_per_scale[i]; ++j)
            f = block("enc" + std::to_string(i) + "." + std::to_string(j), BlockKind::Naf, f);
        skips.push_back(f);
        f = conv("down" + std::to_string(i), f, 2, 0);
    }
    for (int j = 0; j < cfg_.bottleneck_blocks; ++j) f = naf_block("mid." + std::to_string(j), f);

    f = add(f, cross_attention(prior_queries(xp), f, trace));

    for (int i = cfg_.num_scales - 2; i >= 0; --i) {
        f = pixel_shuffle(conv("up" + std::to_string(i), f, 1, 0), 2);
        f = add(f, conv("skip" + std::to_string(i), skips[i], 1, 0));
        for (int j = 0; j < cfg_.decoder_blocks_per_scale[i]; ++j)
            f = block("dec" + std::to_string(i) + "." + std::to_string(j), cfg_.decoder_block, f);
    }
    const Tensor out = add(conv("ending", f, 1, 1), xp);
    return crop_top_left(out, h, w);
}

std::vector<ImageRGB> PriorQueryTransformer::infer(const std::vector<ImageRGB>& batch) const {
    NoGradGuard guard;
    return tensor_to_images(forward(images_to_tensor(batch)), true);
}

ImageRGB PriorQueryTransformer::infer(const ImageRGB& img) const { return infer(std::vector<ImageRGB>{img}).front(); }

Tensor images_to_tensor(const std::vector<ImageRGB>& batch) {
    if (batch.empty()) throw ShapeError("images_to_tensor: empty batch");
    const int h = batch[0].height(), w = batch[0].width();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> v(batch.size() * 3 * plane);
    for (std::size_t n = 0; n < batch.size(); ++n) {
        if (batch[n].height() != h || batch[n].width() != w) throw ShapeError("images_to_tensor: images differ in size");
        const auto src = batch[n].data();
        for (std::size_t p = 0; p < plane; ++p)
            for (int c = 0; c < 3; ++c) v[(n * 3 + c) * plane + p] = src[p * 3 + c];
    }
    return Tensor::from({static_cast<int>(batch.size()), 3, h, w}, std::move(v));
}

std::vector<ImageRGB> tensor_to_images(const Tensor& t, bool clamp) {
    if (t.rank() != 4 || t.dim(1) != 3) throw ShapeError("tensor_to_images: expected [N,3,H,W], got " + shape_string(t.shape()));
    const int n = t.dim(0), h = t.dim(2), w = t.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<ImageRGB> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::vector<double> v(plane * 3);
        for (std::size_t p = 0; p < plane; ++p)
            for (int c = 0; c < 3; ++c) {
                const double x = t.values()[(static_cast<std::size_t>(i) * 3 + c) * plane + p];
                v[p * 3 + c] = clamp ? std::clamp(x, 0.0, 1.0) : x;
            }
        out.emplace_back(h, w, std::move(v));
    }
    return out;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, const Tensor& w_o,
                            const Tensor& b_o, std::vector<double>* weights) {
    return linear(attention(q, k, v, heads, weights), w_o, b_o);
}

}  // namespace nighthaze::nn
