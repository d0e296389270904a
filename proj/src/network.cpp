#include "bln/network.hpp"

#include <algorithm>
#include <cmath>

namespace bln {

const char* to_string(NormKind k) {
    switch (k) {
        case NormKind::none: return "none";
        case NormKind::bn: return "bn";
        case NormKind::brn: return "brn";
        case NormKind::bin: return "bin";
        case NormKind::binlog: return "binlog";
        case NormKind::bininv: return "bininv";
    }
    return "?";
}

NormKind norm_kind_from_string(const std::string& s) {
    if (s == "none") return NormKind::none;
    if (s == "bn") return NormKind::bn;
    if (s == "brn") return NormKind::brn;
    if (s == "bin") return NormKind::bin;
    if (s == "binlog") return NormKind::binlog;
    if (s == "bininv") return NormKind::bininv;
    throw ConfigError("unknown norm kind: " + s);
}

bool is_batchless(NormKind k) {
    return k == NormKind::bin || k == NormKind::binlog || k == NormKind::bininv;
}

SigmaMode sigma_mode_of(NormKind k) {
    switch (k) {
        case NormKind::bin: return SigmaMode::direct;
        case NormKind::binlog: return SigmaMode::log;
        case NormKind::bininv: return SigmaMode::inverse;
        default: throw ContractError("sigma_mode_of: not a batchless kind");
    }
}

const char* to_string(Arch a) {
    return a == Arch::spiral_mlp ? "spiral-mlp" : "cifar-cnn";
}

Arch arch_from_string(const std::string& s) {
    if (s == "spiral-mlp") return Arch::spiral_mlp;
    if (s == "cifar-cnn") return Arch::cifar_cnn;
    throw ConfigError("unknown arch: " + s);
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const Param& p : params) n += p.value.size();
    return n;
}

std::size_t Model::find_param(const std::string& name) const {
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].name == name) return i;
    return kNoParam;
}

namespace {

// Uniform init of "width" w = sqrt(2/(fan_in+fan_out)), read as the standard
// deviation (the Glorot convention): support [-sqrt(3) w, sqrt(3) w]. The
// narrow_init flag switches to the literal support-length reading [-w/2, w/2].
std::vector<double> uniform_init(std::size_t count, std::size_t fan_in, std::size_t fan_out,
                                 std::mt19937_64& rng, bool narrow) {
    const double w = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    const double b = narrow ? w / 2.0 : std::sqrt(3.0) * w;
    std::uniform_real_distribution<double> dist(-b, b);
    std::vector<double> v(count);
    for (double& x : v) x = dist(rng);
    return v;
}

struct Builder {
    Model m;
    std::mt19937_64 rng;
    bool narrow;
    int norm_count = 0;

    std::size_t add_param(Param p) {
        m.params.push_back(std::move(p));
        return m.params.size() - 1;
    }

    void push(LayerSpec spec, std::array<std::size_t, 4> idx = {kNoParam, kNoParam, kNoParam, kNoParam},
              std::size_t bn = kNoParam) {
        m.layers.push_back(spec);
        m.layer_params.push_back(idx);
        m.bn_index.push_back(bn);
    }

    void dense(std::size_t in, std::size_t out, bool decay) {
        const std::string tag = "dense" + std::to_string(m.layers.size());
        std::size_t w = add_param({tag + ".W", Shape{in, out},
                                   uniform_init(in * out, in, out, rng, narrow), decay, false, false});
        std::size_t b = add_param({tag + ".b", Shape{out}, std::vector<double>(out, 0.0),
                                   false, false, false});
        push({.kind = LayerKind::dense, .in = in, .out = out}, {w, b, kNoParam, kNoParam});
    }

    void conv(std::size_t in_ch, std::size_t out_ch, std::size_t k) {
        const std::string tag = "conv" + std::to_string(m.layers.size());
        const std::size_t fan_in = in_ch * k * k, fan_out = out_ch * k * k;
        std::size_t w = add_param({tag + ".K", Shape{out_ch, in_ch, k, k},
                                   uniform_init(out_ch * in_ch * k * k, fan_in, fan_out, rng, narrow),
                                   false, false, false});
        std::size_t b = add_param({tag + ".b", Shape{out_ch}, std::vector<double>(out_ch, 0.0),
                                   false, false, false});
        push({.kind = LayerKind::conv, .in = in_ch, .out = out_ch, .ksize = k},
             {w, b, kNoParam, kNoParam});
    }

    void norm(std::size_t units, Sharing sharing) {
        if (m.norm_kind == NormKind::none) return;
        const std::string tag = "norm" + std::to_string(norm_count++);
        LayerSpec spec{.kind = LayerKind::norm, .norm = m.norm_kind, .sharing = sharing,
                       .units = units};
        std::size_t gamma = add_param({tag + ".gamma", Shape{units},
                                       std::vector<double>(units, 1.0), false, true, false});
        std::size_t beta = add_param({tag + ".beta", Shape{units},
                                      std::vector<double>(units, 0.0), false, true, false});
        if (is_batchless(m.norm_kind)) {
            const SigmaMode mode = sigma_mode_of(m.norm_kind);
            // default mu=0, sigma=1
            std::vector<double> p0 = param_from_sigma(std::vector<double>(units, 1.0), mode);
            std::size_t mu = add_param({tag + ".mu", Shape{units},
                                        std::vector<double>(units, 0.0), false, true, true});
            std::size_t sp = add_param({tag + ".sigma_param", Shape{units}, std::move(p0),
                                        false, true, true});
            push(spec, {mu, sp, gamma, beta});
        } else {
            BatchNormState st;
            st.init(units);
            m.bn_states.push_back(std::move(st));
            push(spec, {gamma, beta, kNoParam, kNoParam}, m.bn_states.size() - 1);
        }
    }

    void isrlu_layer(double alpha) { push({.kind = LayerKind::isrlu_act, .alpha = alpha}); }
    void leaky_layer(double slope) { push({.kind = LayerKind::leaky_act, .slope = slope}); }
    void drop(double rate) {
        if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
        push({.kind = LayerKind::dropout, .rate = rate});
    }
    void pool() { push({.kind = LayerKind::pool}); }
    void flatten() { push({.kind = LayerKind::flatten}); }
};

}  // namespace

Model build_spiral_mlp(NormKind norm, std::uint64_t seed, BuildOptions opts) {
    Builder b;
    b.m.arch = Arch::spiral_mlp;
    b.m.norm_kind = norm;
    b.m.seed = seed;
    b.m.input_shape = Shape{2};
    b.m.n_classes = 3;
    b.m.weight_decay = 1e-6;
    b.m.lambda = opts.lambda;
    b.m.narrow_init = opts.narrow_init;
    b.rng.seed(seed);
    b.narrow = opts.narrow_init;
    const double rate = opts.dropout_rate < 0.0 ? 0.1 : opts.dropout_rate;

    b.dense(2, 50, true);
    b.norm(50, Sharing::per_feature);
    b.isrlu_layer(4.0);
    b.drop(rate);
    b.dense(50, 40, true);
    b.norm(40, Sharing::per_feature);
    b.isrlu_layer(4.0);
    b.drop(rate);
    b.dense(40, 40, true);
    b.norm(40, Sharing::per_feature);
    b.isrlu_layer(4.0);
    b.drop(rate);
    b.dense(40, 3, true);
    return std::move(b.m);
}

Model build_cifar_cnn(NormKind norm, std::uint64_t seed, BuildOptions opts) {
    if (norm == NormKind::brn) throw ConfigError("cifar-cnn has no batch renorm variant");
    Builder b;
    b.m.arch = Arch::cifar_cnn;
    b.m.norm_kind = norm;
    b.m.seed = seed;
    b.m.input_shape = Shape{3, 32, 32};
    b.m.n_classes = 10;
    b.m.weight_decay = 0.0;
    b.m.lambda = opts.lambda;
    b.m.narrow_init = opts.narrow_init;
    b.rng.seed(seed);
    b.narrow = opts.narrow_init;
    const double rate = opts.dropout_rate < 0.0 ? 0.25 : opts.dropout_rate;

    b.norm(3, Sharing::per_channel);
    b.conv(3, 64, 7);
    b.leaky_layer(0.3);
    b.norm(64, Sharing::per_channel);
    b.drop(rate);
    b.pool();
    b.conv(64, 64, 5);
    b.leaky_layer(0.3);
    b.norm(64, Sharing::per_channel);
    b.drop(rate);
    b.pool();
    b.conv(64, 64, 3);
    b.leaky_layer(0.3);
    b.norm(64, Sharing::per_channel);
    b.drop(rate);
    b.pool();
    b.flatten();
    b.dense(64 * 4 * 4, 50, false);
    b.leaky_layer(0.3);
    b.norm(50, Sharing::per_feature);
    b.drop(rate);
    b.dense(50, 50, false);
    b.leaky_layer(0.3);
    b.norm(50, Sharing::per_feature);
    b.drop(rate);
    b.dense(50, 10, false);
    return std::move(b.m);
}

Tensor dropout(const Tensor& x, double rate, Phase phase, std::mt19937_64* rng) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
    if (phase == Phase::eval || rate == 0.0) return x;
    if (!rng) throw ContractError("dropout: train phase needs an rng");
    const double keep = 1.0 - rate;
    const double inv = 1.0 / keep;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> mask(x.size());
    for (double& v : mask) v = (u(*rng) < keep) ? inv : 0.0;
    Tensor m = x.tape->leaf(x.shape(), std::move(mask));
    return mul(x, m);
}

ForwardResult forward(Model& model, const std::vector<double>& inputs, std::size_t n,
                      const ForwardOptions& opts) {
    const std::size_t per = numel(model.input_shape);
    if (inputs.size() != n * per) throw ShapeError("forward: input size mismatch");

    ForwardResult fw;
    fw.tape = std::make_unique<Tape>();
    Tape& t = *fw.tape;

    fw.param_nodes.resize(model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i)
        fw.param_nodes[i] = t.leaf(model.params[i].shape, model.params[i].value).id;
    auto pleaf = [&](std::size_t idx) { return Tensor{&t, fw.param_nodes[idx]}; };

    Shape in_shape = model.input_shape;
    in_shape.insert(in_shape.begin(), n);
    Tensor x = t.leaf(in_shape, inputs.data());

    std::size_t last_capture = 0;
    for (std::size_t c : opts.capture_inputs) last_capture = std::max(last_capture, c);

    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        if (std::find(opts.capture_inputs.begin(), opts.capture_inputs.end(), li) !=
            opts.capture_inputs.end()) {
            fw.captured.push_back(x.values());
            fw.captured_shape.push_back(x.shape());
            if (opts.capture_only && li == last_capture) return fw;
        }
        const LayerSpec& L = model.layers[li];
        const auto& lp = model.layer_params[li];
        switch (L.kind) {
            case LayerKind::dense:
                x = add(matmul(x, pleaf(lp[0])), pleaf(lp[1]));
                break;
            case LayerKind::conv: {
                Tensor bias = reshape(pleaf(lp[1]), Shape{L.out, 1, 1});
                x = add(conv2d(x, pleaf(lp[0])), bias);
                break;
            }
            case LayerKind::norm: {
                if (is_batchless(L.norm)) {
                    BatchlessOut out = batchless_forward(x, pleaf(lp[0]), pleaf(lp[1]),
                                                         pleaf(lp[2]), pleaf(lp[3]),
                                                         sigma_mode_of(L.norm), L.sharing,
                                                         model.lambda);
                    fw.nll_per_instance.push_back(out.nll_per_instance);
                    fw.nll_value.push_back(out.nll.scalar());
                    fw.gauge_metric.push_back(out.gauge_metric);
                    fw.gauge_mean.push_back(out.gauge_mean);
                    fw.norm_layer_of_nll.push_back(li);
                    x = out.a_out;
                } else {
                    BatchNormState& st = model.bn_states[model.bn_index[li]];
                    if (L.norm == NormKind::bn)
                        x = batchnorm_forward(x, pleaf(lp[0]), pleaf(lp[1]), st, opts.phase,
                                              L.sharing, opts.update_moving);
                    else
                        x = batchrenorm_forward(x, pleaf(lp[0]), pleaf(lp[1]), st, opts.phase,
                                                L.sharing, opts.update_moving);
                }
                break;
            }
            case LayerKind::isrlu_act:
                x = isrlu(x, L.alpha);
                break;
            case LayerKind::leaky_act:
                x = leaky_relu(x, L.slope);
                break;
            case LayerKind::dropout:
                x = dropout(x, L.rate, opts.phase, opts.rng);
                break;
            case LayerKind::pool:
                x = maxpool2d(x);
                break;
            case LayerKind::flatten:
                x = reshape(x, Shape{n, x.size() / n});
                break;
        }
    }
    fw.logits = x;
    return fw;
}

LossResult total_loss(const Model& model, ForwardResult& fw,
                      const std::vector<std::size_t>& labels, bool include_decay) {
    Tensor ce = softmax_cross_entropy_per_row(fw.logits, labels);
    double task = 0.0;
    for (double v : ce.values()) task += v;
    task /= static_cast<double>(ce.size());

    Tensor combined = ce;
    for (const Tensor& nll : fw.nll_per_instance) combined = add(combined, nll);
    Tensor total = reduce_all(combined, Reduce::mean);

    if (include_decay && model.weight_decay > 0.0) {
        for (std::size_t i = 0; i < model.params.size(); ++i) {
            if (!model.params[i].decay) continue;
            Tensor w{fw.tape.get(), fw.param_nodes[i]};
            total = add(total, scale(reduce_all(square(w), Reduce::sum),
                                     0.5 * model.weight_decay));
        }
    }
    return LossResult{total, combined, task};
}

}  // namespace bln
