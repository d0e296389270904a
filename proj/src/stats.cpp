#include "bln/stats.hpp"

#include <algorithm>
#include <cmath>

#include "bln/errors.hpp"

namespace bln {

namespace {

// Streaming per-unit moments of an activation.
struct Accum {
    std::vector<double> sum, sumsq;
    double count = 0.0;

    void add(const std::vector<double>& v, const Shape& shape, Sharing sharing) {
        if (shape.size() < 2) throw ShapeError("statistics need a batched activation");
        const std::size_t n = shape[0];
        const std::size_t c = shape[1];
        const std::size_t spatial = numel(shape) / (n * c);
        if (sharing == Sharing::per_feature && spatial != 1)
            throw ShapeError("per-feature statistics need a [N,C] activation");
        if (sum.empty()) {
            sum.assign(c, 0.0);
            sumsq.assign(c, 0.0);
        }
        if (sum.size() != c) throw ShapeError("statistics pass: unit count changed mid-stream");
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double* p = v.data() + (i * c + ch) * spatial;
                for (std::size_t s = 0; s < spatial; ++s) {
                    sum[ch] += p[s];
                    sumsq[ch] += p[s] * p[s];
                }
            }
        }
        count += static_cast<double>(n * spatial);
    }

    std::vector<double> mean() const {
        std::vector<double> m(sum.size());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = sum[i] / count;
        return m;
    }

    // Population variance (divides by the observation count).
    std::vector<double> var() const {
        std::vector<double> v(sum.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double m = sum[i] / count;
            v[i] = std::max(0.0, sumsq[i] / count - m * m);
        }
        return v;
    }
};

// Eval-mode pass over `n` instances capturing the input of each layer in
// `targets` (ascending indices of `model`'s layers).
std::vector<Accum> observe(Model& model, const std::vector<double>& inputs, std::size_t n,
                           const std::vector<std::size_t>& targets,
                           const std::vector<Sharing>& sharings, std::size_t chunk) {
    if (n == 0) throw ContractError("statistics pass needs at least one instance");
    if (chunk == 0) chunk = 1;
    const std::size_t per = numel(model.input_shape);
    if (inputs.size() < n * per) throw ShapeError("statistics pass: input buffer too small");
    ForwardOptions fo;
    fo.phase = Phase::eval;
    fo.update_moving = false;
    fo.capture_inputs = targets;
    fo.capture_only = true;
    std::vector<Accum> acc(targets.size());
    std::vector<double> buf;
    for (std::size_t at = 0; at < n; at += chunk) {
        const std::size_t take = std::min(chunk, n - at);
        buf.assign(inputs.begin() + at * per, inputs.begin() + (at + take) * per);
        ForwardResult fw = forward(model, buf, take, fo);
        if (fw.captured.size() != targets.size())
            throw ContractError("statistics pass: capture count mismatch");
        for (std::size_t i = 0; i < targets.size(); ++i)
            acc[i].add(fw.captured[i], fw.captured_shape[i], sharings[i]);
    }
    return acc;
}

std::vector<double> stds_or_throw(const Accum& acc, const std::string& where) {
    std::vector<double> v = acc.var();
    for (std::size_t u = 0; u < v.size(); ++u) {
        v[u] = std::sqrt(v[u]);
        if (v[u] < kSigmaFloor)
            throw DegenerateError(where + ": unit " + std::to_string(u) +
                                  " has (near-)zero variance in the sample");
    }
    return v;
}

double dropout_rate_of(const Model& m) {
    for (const LayerSpec& l : m.layers)
        if (l.kind == LayerKind::dropout) return l.rate;
    return 0.0;
}

Model build_like(const Model& src, NormKind target) {
    BuildOptions opts;
    opts.dropout_rate = dropout_rate_of(src);
    opts.lambda = src.lambda;
    opts.narrow_init = src.narrow_init;
    Model dst = src.arch == Arch::spiral_mlp ? build_spiral_mlp(target, src.seed, opts)
                                             : build_cifar_cnn(target, src.seed, opts);
    dst.weight_decay = src.weight_decay;
    return dst;
}

void copy_param(Model& dst, std::size_t di, const Model& src, std::size_t si) {
    if (dst.params[di].shape != src.params[si].shape)
        throw ContractError("migration: shape mismatch for " + dst.params[di].name);
    dst.params[di].value = src.params[si].value;
}

}  // namespace

void finalize_population_stats(Model& model, const Dataset& data, std::size_t chunk) {
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const LayerSpec& L = model.layers[li];
        if (L.kind != LayerKind::norm || is_batchless(L.norm)) continue;
        std::vector<Accum> acc =
            observe(model, data.inputs, data.size(), {li}, {L.sharing}, chunk);
        BatchNormState& st = model.bn_states[model.bn_index[li]];
        st.population_mu = acc[0].mean();
        st.population_var = acc[0].var();
        st.finalized = true;  // later layers now see this one on population stats
    }
}

void init_from_sample(Model& model, const std::vector<double>& sample_inputs, std::size_t n,
                      std::size_t chunk) {
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const LayerSpec& L = model.layers[li];
        if (L.kind != LayerKind::norm || !is_batchless(L.norm)) continue;
        std::vector<Accum> acc = observe(model, sample_inputs, n, {li}, {L.sharing}, chunk);
        const auto& lp = model.layer_params[li];
        const std::string& mu_name = model.params[lp[0]].name;
        model.params[lp[0]].value = acc[0].mean();
        model.params[lp[1]].value =
            param_from_sigma(stds_or_throw(acc[0], mu_name), sigma_mode_of(L.norm));
    }
}

Model migrate_from_batchnorm(const Model& src, NormKind target) {
    if (src.norm_kind != NormKind::bn && src.norm_kind != NormKind::brn)
        throw ConfigError("migration source has no batch-normalization layers");
    if (!is_batchless(target)) throw ConfigError("migration target must be a batchless kind");
    Model dst = build_like(src, target);
    if (dst.layers.size() != src.layers.size())
        throw ContractError("migration: layer structure mismatch");
    for (std::size_t li = 0; li < dst.layers.size(); ++li) {
        const auto& dlp = dst.layer_params[li];
        const auto& slp = src.layer_params[li];
        if (dst.layers[li].kind == LayerKind::norm) {
            const BatchNormState& st = src.bn_states[src.bn_index[li]];
            const auto& mu = st.finalized ? st.population_mu : st.moving_mu;
            const auto& var = st.finalized ? st.population_var : st.moving_var;
            std::vector<double> sigma(var.size());
            for (std::size_t u = 0; u < var.size(); ++u)
                sigma[u] = std::sqrt(var[u] + st.epsilon);
            dst.params[dlp[0]].value = mu;
            dst.params[dlp[1]].value = param_from_sigma(sigma, sigma_mode_of(target));
            copy_param(dst, dlp[2], src, slp[0]);  // gamma
            copy_param(dst, dlp[3], src, slp[1]);  // beta
        } else {
            for (std::size_t j = 0; j < 4; ++j)
                if (dlp[j] != kNoParam) copy_param(dst, dlp[j], src, slp[j]);
        }
    }
    return dst;
}

Model migrate_from_plain(const Model& src, NormKind target,
                         const std::vector<double>& sample_inputs, std::size_t n,
                         std::size_t chunk) {
    if (src.norm_kind != NormKind::none)
        throw ConfigError("migration source must be an unnormalized model");
    if (!is_batchless(target)) throw ConfigError("migration target must be a batchless kind");
    Model dst = build_like(src, target);

    // The source lacks the norm layers; align the rest positionally.
    std::vector<std::size_t> capture_src, dst_norm;
    std::vector<Sharing> sharings;
    std::size_t si = 0;
    for (std::size_t li = 0; li < dst.layers.size(); ++li) {
        if (dst.layers[li].kind == LayerKind::norm) {
            if (si >= src.layers.size())
                throw ContractError("migration: norm layer after the last source layer");
            capture_src.push_back(si);
            dst_norm.push_back(li);
            sharings.push_back(dst.layers[li].sharing);
        } else {
            if (si >= src.layers.size() || src.layers[si].kind != dst.layers[li].kind)
                throw ContractError("migration: layer structure mismatch");
            for (std::size_t j = 0; j < 4; ++j)
                if (dst.layer_params[li][j] != kNoParam)
                    copy_param(dst, dst.layer_params[li][j], src, src.layer_params[si][j]);
            ++si;
        }
    }

    Model probe = src;
    std::vector<Accum> acc = observe(probe, sample_inputs, n, capture_src, sharings, chunk);
    for (std::size_t i = 0; i < dst_norm.size(); ++i) {
        const std::size_t li = dst_norm[i];
        const auto& lp = dst.layer_params[li];
        const std::vector<double> mu = acc[i].mean();
        const std::vector<double> sigma = stds_or_throw(acc[i], dst.params[lp[0]].name);
        dst.params[lp[0]].value = mu;
        dst.params[lp[1]].value = param_from_sigma(sigma, sigma_mode_of(target));
        dst.params[lp[2]].value = sigma;  // gamma
        dst.params[lp[3]].value = mu;     // beta: layer starts as the identity
    }
    return dst;
}

double max_output_difference(Model& a, Model& b, const std::vector<double>& inputs,
                             std::size_t n) {
    ForwardOptions fo;
    fo.phase = Phase::eval;
    fo.update_moving = false;
    ForwardResult fa = forward(a, inputs, n, fo);
    ForwardResult fb = forward(b, inputs, n, fo);
    const std::vector<double> va = fa.logits.values();
    const std::vector<double> vb = fb.logits.values();
    if (va.size() != vb.size()) throw ShapeError("output comparison: logit shapes differ");
    double m = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) m = std::max(m, std::abs(va[i] - vb[i]));
    return m;
}

}  // namespace bln
