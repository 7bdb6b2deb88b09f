// The restoration network: conv head -> patch embed -> transformer blocks
// with weather-aware multi-scale MoE feed-forwards -> linear expand -> conv
// tail, plus the parallel weather classifier branch feeding the router.
#pragma once

#include <sstream>

#include "mowe/ops.hpp"
#include "mowe/weather.hpp"

namespace mowe {

struct NamedParam {
    std::string name;
    Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

enum class RouterKind { Plain, Weather };

inline const char* router_name(RouterKind k) { return k == RouterKind::Plain ? "plain" : "weather"; }

inline RouterKind router_from_name(const std::string& s) {
    if (s == "plain") return RouterKind::Plain;
    if (s == "weather") return RouterKind::Weather;
    throw ParamError("unknown router kind: " + s);
}

struct ExpertGroup {
    int count = 1;
    int kernel = 1;  // odd; 1 means no conv branch
};

struct ModelConfig {
    int height = 64, width = 64;
    int patch_size = 4;
    int embed_dim = 32;
    int depth = 2;
    int heads = 4;
    int num_experts = 4;
    int top_k = 2;
    std::vector<ExpertGroup> expert_groups = {{1, 1}, {1, 3}, {1, 5}, {1, 7}};
    double hidden_ratio = 2.0;
    int head_channels = 8;
    int cls_depth = 1;
    int cls_dim = 16;
    int num_classes = 5;
    RouterKind router = RouterKind::Weather;
    bool route_post_ln = false;

    int hidden_dim() const { return static_cast<int>(embed_dim * hidden_ratio); }
    int grid_h() const { return height / patch_size; }
    int grid_w() const { return width / patch_size; }
    int tokens() const { return grid_h() * grid_w(); }

    void validate() const {
        if (height < 8 || width < 8) throw ParamError("model: resolution too small");
        if (patch_size < 1 || height % patch_size != 0 || width % patch_size != 0)
            throw ParamError("model: patch_size must divide height and width");
        if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
            throw ParamError("model: heads must divide embed_dim");
        if (depth < 1) throw ParamError("model: depth must be >= 1");
        if (top_k < 1 || top_k > num_experts) throw ParamError("model: need 1 <= top_k <= num_experts");
        int total = 0;
        for (const auto& g : expert_groups) {
            if (g.count < 0) throw ParamError("model: negative expert group count");
            if (g.kernel < 1 || g.kernel % 2 == 0) throw ParamError("model: expert kernels must be odd");
            total += g.count;
        }
        if (total != num_experts) throw ParamError("model: expert group counts must sum to num_experts");
        if (hidden_dim() < 1) throw ParamError("model: hidden_ratio too small");
        if (head_channels < 1 || cls_depth < 1 || cls_dim < 1) throw ParamError("model: bad branch dims");
        if (cls_dim % heads != 0) throw ParamError("model: heads must divide cls_dim");
        if (num_classes < 2) throw ParamError("model: need at least two classes");
    }

    // per-expert kernel size, groups flattened in order
    std::vector<int> expert_kernels() const {
        std::vector<int> ks;
        for (const auto& g : expert_groups)
            for (int i = 0; i < g.count; ++i) ks.push_back(g.kernel);
        return ks;
    }

    std::vector<std::pair<std::string, std::string>> to_kv() const {
        std::ostringstream gs;
        for (size_t i = 0; i < expert_groups.size(); ++i) {
            if (i) gs << ",";
            gs << expert_groups[i].count << "x" << expert_groups[i].kernel;
        }
        return {
            {"height", std::to_string(height)},
            {"width", std::to_string(width)},
            {"patch_size", std::to_string(patch_size)},
            {"embed_dim", std::to_string(embed_dim)},
            {"depth", std::to_string(depth)},
            {"heads", std::to_string(heads)},
            {"num_experts", std::to_string(num_experts)},
            {"top_k", std::to_string(top_k)},
            {"expert_groups", gs.str()},
            {"hidden_ratio", std::to_string(hidden_ratio)},
            {"head_channels", std::to_string(head_channels)},
            {"cls_depth", std::to_string(cls_depth)},
            {"cls_dim", std::to_string(cls_dim)},
            {"num_classes", std::to_string(num_classes)},
            {"router", router_name(router)},
            {"route_post_ln", route_post_ln ? "1" : "0"},
        };
    }

    static std::vector<ExpertGroup> parse_groups(const std::string& text) {
        std::vector<ExpertGroup> out;
        size_t pos = 0;
        while (pos < text.size()) {
            size_t end = text.find(',', pos);
            if (end == std::string::npos) end = text.size();
            std::string item = text.substr(pos, end - pos);
            size_t x = item.find('x');
            if (x == std::string::npos) throw ParamError("bad expert group spec: " + item);
            out.push_back({std::stoi(item.substr(0, x)), std::stoi(item.substr(x + 1))});
            pos = end + 1;
        }
        return out;
    }

    void apply_kv(const std::string& key, const std::string& value) {
        if (key == "height") height = std::stoi(value);
        else if (key == "width") width = std::stoi(value);
        else if (key == "patch_size") patch_size = std::stoi(value);
        else if (key == "embed_dim") embed_dim = std::stoi(value);
        else if (key == "depth") depth = std::stoi(value);
        else if (key == "heads") heads = std::stoi(value);
        else if (key == "num_experts") num_experts = std::stoi(value);
        else if (key == "top_k") top_k = std::stoi(value);
        else if (key == "expert_groups") expert_groups = parse_groups(value);
        else if (key == "hidden_ratio") hidden_ratio = std::stod(value);
        else if (key == "head_channels") head_channels = std::stoi(value);
        else if (key == "cls_depth") cls_depth = std::stoi(value);
        else if (key == "cls_dim") cls_dim = std::stoi(value);
        else if (key == "num_classes") num_classes = std::stoi(value);
        else if (key == "router") router = router_from_name(value);
        else if (key == "route_post_ln") route_post_ln = value == "1" || value == "true";
        else throw ParamError("unknown model config key: " + key);
    }
};

// Table 4 presets plus the desk-scale default.
inline ModelConfig model_preset(const std::string& name) {
    ModelConfig c;
    if (name == "tiny") {
        // defaults above
    } else if (name == "n4-k0") {
        // 4 experts with dense gating (K = M)
        c.num_experts = 4;
        c.top_k = 4;
        c.expert_groups = {{1, 1}, {1, 3}, {1, 5}, {1, 7}};
    } else if (name == "n16-k4") {
        c.num_experts = 16;
        c.top_k = 4;
        c.expert_groups = {{4, 1}, {4, 3}, {4, 5}, {4, 7}};
    } else {
        throw ParamError("unknown preset: " + name + " (expected tiny, n4-k0 or n16-k4)");
    }
    return c;
}

// ---------------------------------------------------------------------------
// Building blocks

namespace nn {

inline Tensor init_normal(Shape shape, uint64_t seed, double stddev, bool requires_grad = true) {
    Rng rng(seed);
    return Tensor::randn(std::move(shape), rng, stddev, requires_grad);
}

struct Linear {
    Tensor w, b;  // w: [in x out]

    void init(int in, int out, uint64_t seed) {
        w = init_normal({in, out}, derive_seed(seed, "w"), 1.0 / std::sqrt(static_cast<double>(in)));
        b = Tensor(Shape{out}, 0.0, true);
    }

    // residual branches start at zero so every block is the identity map at
    // init; the branch weights pick up gradient from the first step on
    void init_zero(int in, int out) {
        w = Tensor(Shape{in, out}, 0.0, true);
        b = Tensor(Shape{out}, 0.0, true);
    }

    Tensor forward(const Tensor& x) const { return add_rowwise(matmul(x, w), b); }

    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

struct LayerNorm {
    Tensor gamma, beta;
    double eps = 1e-5;

    void init(int d) {
        gamma = Tensor(Shape{d}, 1.0, true);
        beta = Tensor(Shape{d}, 0.0, true);
    }

    Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

struct Conv {
    Tensor w, b;
    int stride = 1, padding = 0, groups = 1;

    void init(int cout, int cin_per_group, int k, int groups_, int padding_, uint64_t seed) {
        groups = groups_;
        padding = padding_;
        double fan_in = static_cast<double>(cin_per_group) * k * k;
        w = init_normal({cout, cin_per_group, k, k}, derive_seed(seed, "w"), 1.0 / std::sqrt(fan_in));
        b = Tensor(Shape{cout}, 0.0, true);
    }

    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, padding, groups); }

    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

}  // namespace nn

// tokens [N x D] -> channel-major grid [D x gh x gw]
inline Tensor tokens_to_grid(const Tensor& tokens, int gh, int gw) {
    if (tokens.rank() != 2 || tokens.dim(0) != gh * gw)
        throw ShapeError("tokens_to_grid: token count does not form a " + std::to_string(gh) + "x" +
                         std::to_string(gw) + " grid");
    return reshape(transpose2d(tokens), {tokens.dim(1), gh, gw});
}

inline Tensor grid_to_tokens(const Tensor& grid) {
    if (grid.rank() != 3) throw ShapeError("grid_to_tokens: expected [D x gh x gw]");
    int d = grid.dim(0), n = grid.dim(1) * grid.dim(2);
    return transpose2d(reshape(grid, {d, n}));
}

// ---------------------------------------------------------------------------
// Multi-head self-attention with pre-norm and residual

struct Attention {
    nn::LayerNorm ln;
    nn::Linear wq, wk, wv, wo;
    int heads = 1;

    void init(int dim, int heads_, uint64_t seed) {
        heads = heads_;
        ln.init(dim);
        wq.init(dim, dim, derive_seed(seed, "q"));
        wk.init(dim, dim, derive_seed(seed, "k"));
        wv.init(dim, dim, derive_seed(seed, "v"));
        wo.init_zero(dim, dim);
    }

    Tensor forward(const Tensor& tokens, std::vector<Tensor>* attn_maps = nullptr) const {
        int d = tokens.dim(1);
        int dh = d / heads;
        Tensor xn = ln.forward(tokens);
        Tensor q = wq.forward(xn), k = wk.forward(xn), v = wv.forward(xn);
        std::vector<Tensor> ctx;
        double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int h = 0; h < heads; ++h) {
            Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
            Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
            Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
            Tensor scores = scale(matmul(qh, transpose2d(kh)), inv_scale);
            Tensor attn = softmax(scores, -1);
            if (attn_maps) attn_maps->push_back(attn);
            ctx.push_back(matmul(attn, vh));
        }
        Tensor merged = heads == 1 ? ctx[0] : concat(ctx, 1);
        return add(tokens, wo.forward(merged));
    }

    void collect(ParamList& out, const std::string& prefix) const {
        ln.collect(out, prefix + ".ln");
        wq.collect(out, prefix + ".wq");
        wk.collect(out, prefix + ".wk");
        wv.collect(out, prefix + ".wv");
        wo.collect(out, prefix + ".wo");
    }
};

// ---------------------------------------------------------------------------
// Experts: pointwise FFN plus an optional depthwise conv over the token grid

struct Expert {
    nn::Linear fc1, fc2;
    int kernel = 1;
    nn::Conv conv;  // depthwise, present when kernel > 1

    void init(int dim, int hidden, int kernel_, uint64_t seed) {
        kernel = kernel_;
        fc1.init(dim, hidden, derive_seed(seed, "fc1"));
        fc2.init_zero(hidden, dim);
        if (kernel > 1) {
            conv.init(dim, 1, kernel, dim, (kernel - 1) / 2, derive_seed(seed, "dw"));
            std::fill(conv.w.vec().begin(), conv.w.vec().end(), 0.0);
        }
    }

    Tensor ffn(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }

    // conv branch over the full token grid, returned in token layout
    Tensor conv_tokens(const Tensor& tokens, int gh, int gw) const {
        return grid_to_tokens(conv.forward(tokens_to_grid(tokens, gh, gw)));
    }

    // FFN(tokens) + DWConv(token grid); the n=1 group omits the conv branch
    Tensor forward(const Tensor& tokens, int gh, int gw) const {
        Tensor out = ffn(tokens);
        if (kernel > 1) out = add(out, conv_tokens(tokens, gh, gw));
        return out;
    }

    void collect(ParamList& out, const std::string& prefix) const {
        fc1.collect(out, prefix + ".fc1");
        fc2.collect(out, prefix + ".fc2");
        if (kernel > 1) conv.collect(out, prefix + ".dw");
    }
};

// ---------------------------------------------------------------------------
// Routers

struct RoutingRecord {
    int num_experts = 0;
    int tokens = 0;
    std::vector<int> selected;      // tokens x K expert ids, row-major
    std::vector<double> weights;    // matching gate values
    std::vector<double> gate_sums;  // per-expert total gate mass
};

inline uint64_t routing_fingerprint(const std::vector<RoutingRecord>& records) {
    uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (const auto& r : records)
        for (int id : r.selected) h = hash_combine(h, static_cast<uint64_t>(id));
    return h;
}

struct Router {
    RouterKind kind = RouterKind::Plain;
    Tensor gate;           // [D_r x M]
    nn::Linear adapt1, adapt2;  // weather-aware only

    void init(RouterKind kind_, int dim, int weather_dim, int experts, uint64_t seed) {
        kind = kind_;
        int dr = dim;
        if (kind == RouterKind::Weather) {
            adapt1.init(dim + weather_dim, dr, derive_seed(seed, "a1"));
            adapt2.init(dr, dr, derive_seed(seed, "a2"));
        }
        gate = nn::init_normal({dr, experts}, derive_seed(seed, "gate"), 1.0 / std::sqrt(static_cast<double>(dr)));
    }

    // router logits; weather tokens are required (and consumed) only by the
    // weather-aware variant
    Tensor logits(const Tensor& content, const Tensor* weather_tokens) const {
        if (kind == RouterKind::Plain) return matmul(content, gate);
        if (!weather_tokens || !weather_tokens->defined())
            throw UsageError("router: weather tokens required for the weather-aware router");
        if (weather_tokens->dim(0) != content.dim(0))
            throw ShapeError("router: weather token count does not match content tokens");
        Tensor joint = concat({content, *weather_tokens}, 1);
        Tensor a = adapt2.forward(gelu(adapt1.forward(joint)));
        return matmul(a, gate);
    }

    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".gate", gate});
        if (kind == RouterKind::Weather) {
            adapt1.collect(out, prefix + ".adapt1");
            adapt2.collect(out, prefix + ".adapt2");
        }
    }
};

// Softmax over Top-K-masked logits. Rows of the result carry exactly K
// nonzeros summing to 1.
inline Tensor gate_from_logits(const Tensor& logits, int k) { return softmax(top_k_mask(logits, k), -1); }

// ---------------------------------------------------------------------------
// MoE feed-forward block (Eq. (2) wiring): y + sum_i g_i(y) * FFN_i(LN(y))

struct MoeFfn {
    nn::LayerNorm ln;
    Router router;
    std::vector<Expert> experts;
    int top_k = 1;
    bool route_post_ln = false;

    void init(const ModelConfig& cfg, uint64_t seed) {
        ln.init(cfg.embed_dim);
        top_k = cfg.top_k;
        route_post_ln = cfg.route_post_ln;
        router.init(cfg.router, cfg.embed_dim, cfg.cls_dim, cfg.num_experts, derive_seed(seed, "router"));
        auto kernels = cfg.expert_kernels();
        experts.resize(kernels.size());
        for (size_t i = 0; i < kernels.size(); ++i)
            experts[i].init(cfg.embed_dim, cfg.hidden_dim(), kernels[i], derive_seed(seed, "expert", static_cast<int>(i)));
    }

    Tensor forward(const Tensor& y, const Tensor* weather_tokens, int gh, int gw,
                   RoutingRecord* record = nullptr) const {
        int n = y.dim(0);
        int m = static_cast<int>(experts.size());
        Tensor y_norm = ln.forward(y);
        Tensor logits = router.logits(route_post_ln ? y_norm : y, weather_tokens);
        Tensor gates = gate_from_logits(logits, top_k);

        // selection recomputed with the same tie-break as the mask op
        std::vector<std::vector<int>> token_lists(static_cast<size_t>(m));
        std::vector<std::vector<int64_t>> gate_idx(static_cast<size_t>(m));
        RoutingRecord rec;
        rec.num_experts = m;
        rec.tokens = n;
        rec.gate_sums.assign(static_cast<size_t>(m), 0.0);
        for (int t = 0; t < n; ++t) {
            std::vector<int> sel = top_k_row_indices(logits.data() + static_cast<int64_t>(t) * m, m, top_k);
            for (int e : sel) {
                token_lists[static_cast<size_t>(e)].push_back(t);
                gate_idx[static_cast<size_t>(e)].push_back(static_cast<int64_t>(t) * m + e);
                rec.selected.push_back(e);
                rec.weights.push_back(gates[static_cast<int64_t>(t) * m + e]);
                rec.gate_sums[static_cast<size_t>(e)] += gates[static_cast<int64_t>(t) * m + e];
            }
        }

        // only selected experts run; the conv branch always sees the full
        // grid so neighbourhoods stay intact
        Tensor acc(Shape{n, y.dim(1)});
        for (int e = 0; e < m; ++e) {
            const auto& idx = token_lists[static_cast<size_t>(e)];
            if (idx.empty()) continue;
            Tensor rows;
            if (static_cast<int>(idx.size()) == n) {
                rows = experts[static_cast<size_t>(e)].forward(y_norm, gh, gw);
            } else {
                rows = experts[static_cast<size_t>(e)].ffn(gather_rows(y_norm, idx));
                if (experts[static_cast<size_t>(e)].kernel > 1) {
                    Tensor conv_full = experts[static_cast<size_t>(e)].conv_tokens(y_norm, gh, gw);
                    rows = add(rows, gather_rows(conv_full, idx));
                }
            }
            Tensor g = gather_elems(gates, gate_idx[static_cast<size_t>(e)]);
            acc = scatter_add_rows(acc, idx, scale_rows(rows, g));
        }
        if (record) *record = std::move(rec);
        return add(acc, y);
    }

    void collect(ParamList& out, const std::string& prefix) const {
        ln.collect(out, prefix + ".ln");
        router.collect(out, prefix + ".router");
        for (size_t i = 0; i < experts.size(); ++i)
            experts[i].collect(out, prefix + ".expert" + std::to_string(i));
    }
};

struct TransformerBlock {
    Attention attn;
    MoeFfn ffn;

    void init(const ModelConfig& cfg, uint64_t seed) {
        attn.init(cfg.embed_dim, cfg.heads, derive_seed(seed, "attn"));
        ffn.init(cfg, derive_seed(seed, "ffn"));
    }

    Tensor forward(const Tensor& tokens, const Tensor* weather_tokens, int gh, int gw,
                   RoutingRecord* record = nullptr) const {
        return ffn.forward(attn.forward(tokens), weather_tokens, gh, gw, record);
    }

    void collect(ParamList& out, const std::string& prefix) const {
        attn.collect(out, prefix + ".attn");
        ffn.collect(out, prefix + ".ffn");
    }
};

// ---------------------------------------------------------------------------
// Patch embedding with learned absolute positions

struct PatchEmbed {
    nn::Linear proj;
    Tensor pos;
    int patch = 1;

    void init(int in_channels, int patch_, int dim, int n_tokens, uint64_t seed) {
        patch = patch_;
        proj.init(in_channels * patch_ * patch_, dim, derive_seed(seed, "proj"));
        pos = nn::init_normal({n_tokens, dim}, derive_seed(seed, "pos"), 0.02);
    }

    Tensor forward(const Tensor& x) const {
        Tensor tokens = proj.forward(extract_patches(x, patch));
        if (tokens.dim(0) != pos.dim(0))
            throw ShapeError("patch_embed: input resolution disagrees with positional table");
        return add(tokens, pos);
    }

    void collect(ParamList& out, const std::string& prefix) const {
        proj.collect(out, prefix + ".proj");
        out.push_back({prefix + ".pos", pos});
    }
};

// plain pre-norm transformer FFN, used by the classifier branch
struct PlainFfn {
    nn::LayerNorm ln;
    nn::Linear fc1, fc2;

    void init(int dim, int hidden, uint64_t seed) {
        ln.init(dim);
        fc1.init(dim, hidden, derive_seed(seed, "fc1"));
        fc2.init_zero(hidden, dim);
    }

    Tensor forward(const Tensor& x) const { return add(x, fc2.forward(gelu(fc1.forward(ln.forward(x))))); }

    void collect(ParamList& out, const std::string& prefix) const {
        ln.collect(out, prefix + ".ln");
        fc1.collect(out, prefix + ".fc1");
        fc2.collect(out, prefix + ".fc2");
    }
};

// ---------------------------------------------------------------------------
// Weather classifier: small ViT sharing the restoration patch grid, exposing
// pre-GAP token embeddings as the weather tokens

struct WeatherClassifier {
    PatchEmbed embed;
    std::vector<Attention> attns;
    std::vector<PlainFfn> ffns;
    nn::LayerNorm final_ln;
    nn::Linear head1, head2;

    void init(const ModelConfig& cfg, uint64_t seed) {
        embed.init(3, cfg.patch_size, cfg.cls_dim, cfg.tokens(), derive_seed(seed, "embed"));
        attns.resize(static_cast<size_t>(cfg.cls_depth));
        ffns.resize(static_cast<size_t>(cfg.cls_depth));
        for (int i = 0; i < cfg.cls_depth; ++i) {
            attns[static_cast<size_t>(i)].init(cfg.cls_dim, cfg.heads, derive_seed(seed, "attn", i));
            ffns[static_cast<size_t>(i)].init(cfg.cls_dim, 2 * cfg.cls_dim, derive_seed(seed, "ffn", i));
        }
        final_ln.init(cfg.cls_dim);
        head1.init(cfg.cls_dim, cfg.cls_dim, derive_seed(seed, "head1"));
        head2.init(cfg.cls_dim, cfg.num_classes, derive_seed(seed, "head2"));
    }

    struct Output {
        Tensor logits;  // [num_classes]
        Tensor tokens;  // [N x cls_dim], pre-GAP weather tokens
    };

    Output forward(const Tensor& img) const {
        Tensor t = embed.forward(img);
        for (size_t i = 0; i < attns.size(); ++i) t = ffns[i].forward(attns[i].forward(t));
        t = final_ln.forward(t);
        Tensor pooled = reshape(global_avg_pool(t), {1, t.dim(1)});
        Tensor logits = reshape(head2.forward(gelu(head1.forward(pooled))), {head2.b.dim(0)});
        return {logits, t};
    }

    void collect(ParamList& out, const std::string& prefix) const {
        embed.collect(out, prefix + ".embed");
        for (size_t i = 0; i < attns.size(); ++i) {
            attns[i].collect(out, prefix + ".block" + std::to_string(i) + ".attn");
            ffns[i].collect(out, prefix + ".block" + std::to_string(i) + ".ffn");
        }
        final_ln.collect(out, prefix + ".final_ln");
        head1.collect(out, prefix + ".head1");
        head2.collect(out, prefix + ".head2");
    }
};

// ---------------------------------------------------------------------------
// Full model

struct RestoreResult {
    Tensor pred;            // unclamped [3 x H x W]; clamp01 for evaluation
    Tensor weather_logits;  // [num_classes]
    Tensor weather_tokens;  // detached [N x cls_dim]
    std::vector<RoutingRecord> records;  // one per block
};

struct MoweModel {
    ModelConfig cfg;
    nn::Conv head1, head2;  // 3 -> C -> C
    PatchEmbed embed;       // C*p^2 -> D
    std::vector<TransformerBlock> blocks;
    nn::Linear expand;      // D -> C*p^2
    nn::Conv tail1, tail2;  // C -> C -> 3
    WeatherClassifier classifier;

    explicit MoweModel(const ModelConfig& config, uint64_t seed = 0) : cfg(config) {
        cfg.validate();
        head1.init(cfg.head_channels, 3, 3, 1, 1, derive_seed(seed, "head1"));
        head2.init(cfg.head_channels, cfg.head_channels, 3, 1, 1, derive_seed(seed, "head2"));
        embed.init(cfg.head_channels, cfg.patch_size, cfg.embed_dim, cfg.tokens(), derive_seed(seed, "embed"));
        blocks.resize(static_cast<size_t>(cfg.depth));
        for (int i = 0; i < cfg.depth; ++i) blocks[static_cast<size_t>(i)].init(cfg, derive_seed(seed, "block", i));
        expand.init(cfg.embed_dim, cfg.head_channels * cfg.patch_size * cfg.patch_size, derive_seed(seed, "expand"));
        tail1.init(cfg.head_channels, cfg.head_channels, 3, 1, 1, derive_seed(seed, "tail1"));
        tail2.init(3, cfg.head_channels, 3, 1, 1, derive_seed(seed, "tail2"));
        classifier.init(cfg, derive_seed(seed, "classifier"));
    }

    WeatherClassifier::Output classify_weather(const Tensor& img) const {
        check_image(img, "classify_weather");
        return classifier.forward(img);
    }

    RestoreResult restore(const Tensor& img) const {
        check_image(img, "restore");
        if (img.dim(1) != cfg.height || img.dim(2) != cfg.width)
            throw ShapeError("restore: input is " + shape_str(img.shape()) + " but model expects " +
                             std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
        RestoreResult out;

        auto cls = classifier.forward(img);
        out.weather_logits = cls.logits;
        // classifier branch learns from its own loss only
        out.weather_tokens = cls.tokens.detach();

        Tensor x = head2.forward(gelu(head1.forward(img)));
        Tensor tokens = embed.forward(x);
        int gh = cfg.grid_h(), gw = cfg.grid_w();
        out.records.resize(blocks.size());
        const Tensor* wtok = cfg.router == RouterKind::Weather ? &out.weather_tokens : nullptr;
        for (size_t i = 0; i < blocks.size(); ++i)
            tokens = blocks[i].forward(tokens, wtok, gh, gw, &out.records[i]);
        Tensor xl = fold_patches(expand.forward(tokens), cfg.head_channels, cfg.height, cfg.width, cfg.patch_size);
        out.pred = tail2.forward(gelu(tail1.forward(xl)));
        return out;
    }

    ParamList params() const {
        ParamList out;
        head1.collect(out, "head1");
        head2.collect(out, "head2");
        embed.collect(out, "embed");
        for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, "block" + std::to_string(i));
        expand.collect(out, "expand");
        tail1.collect(out, "tail1");
        tail2.collect(out, "tail2");
        classifier.collect(out, "classifier");
        return out;
    }

    void zero_grad() const {
        for (auto& p : params()) p.tensor.zero_grad();
    }

    void copy_params_from(const MoweModel& other) {
        ParamList mine = params(), theirs = other.params();
        if (mine.size() != theirs.size()) throw UsageError("copy_params_from: model structure mismatch");
        for (size_t i = 0; i < mine.size(); ++i) {
            if (mine[i].name != theirs[i].name || mine[i].tensor.size() != theirs[i].tensor.size())
                throw UsageError("copy_params_from: parameter mismatch at " + mine[i].name);
            mine[i].tensor.vec() = theirs[i].tensor.vec();
        }
    }
};

// ---------------------------------------------------------------------------
// Routing-score analysis (per-weather gate mass over experts)

struct ImageRouting {
    WeatherKind label;
    std::vector<double> gate_sums;  // [M], summed over tokens and blocks
};

inline std::vector<double> collect_gate_sums(const std::vector<RoutingRecord>& records) {
    if (records.empty()) return {};
    std::vector<double> sums(static_cast<size_t>(records[0].num_experts), 0.0);
    for (const auto& r : records)
        for (size_t e = 0; e < sums.size(); ++e) sums[e] += r.gate_sums[e];
    return sums;
}

// rows: weather kinds (enum order); entry (w, i) is the normalized gate mass
// expert i received from images with weather w
inline std::vector<std::vector<double>> routing_scores(const std::vector<ImageRouting>& items, int num_experts) {
    std::vector<std::vector<double>> table(kNumWeatherKinds, std::vector<double>(static_cast<size_t>(num_experts), 0.0));
    for (const auto& item : items) {
        auto& row = table[static_cast<size_t>(item.label)];
        for (size_t e = 0; e < row.size(); ++e) row[e] += item.gate_sums[e];
    }
    for (auto& row : table) {
        double total = 0.0;
        for (double v : row) total += v;
        if (total > 0.0)
            for (double& v : row) v /= total;
    }
    return table;
}

inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) acc += p[i] * std::log(p[i] / q[i]);
    return acc;
}

inline double jensen_shannon(const std::vector<double>& p, const std::vector<double>& q) {
    std::vector<double> m(p.size());
    for (size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
    return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m);
}

// mean pairwise JSD between weather rows that received any mass
inline double mean_routing_divergence(const std::vector<std::vector<double>>& table) {
    std::vector<size_t> live;
    for (size_t i = 0; i < table.size(); ++i) {
        double s = 0.0;
        for (double v : table[i]) s += v;
        if (s > 0.0) live.push_back(i);
    }
    if (live.size() < 2) return 0.0;
    double total = 0.0;
    int pairs = 0;
    for (size_t a = 0; a < live.size(); ++a)
        for (size_t b = a + 1; b < live.size(); ++b) {
            total += jensen_shannon(table[live[a]], table[live[b]]);
            ++pairs;
        }
    return total / pairs;
}

}  // namespace mowe
